"""Versioned prompt templates with ``{{name}}`` placeholders."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Tuple

from .providers import PURPOSES, ChatRequest, Message

PLACEHOLDER = re.compile(r"\{\{\s*([a-z_][a-z0-9_]*)\s*\}\}")
_SECTION = re.compile(r"^=== (system|user) ===\s*$", re.MULTILINE)


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    purpose: str
    schema_id: str
    version: str
    sections: Tuple[Tuple[str, str], ...]

    @property
    def placeholders(self) -> Tuple[str, ...]:
        seen = []
        for _, text in self.sections:
            for m in PLACEHOLDER.finditer(text):
                if m.group(1) not in seen:
                    seen.append(m.group(1))
        return tuple(seen)


def parse_template(text: str, name: str) -> PromptTemplate:
    header = {}
    body_start = 0
    for line in text.splitlines(keepends=True):
        if not line.startswith("#"):
            break
        body_start += len(line)
        key, sep, value = line[1:].partition(":")
        if sep:
            header[key.strip()] = value.strip()
    body = text[body_start:]
    marks = list(_SECTION.finditer(body))
    if not marks:
        raise PromptError(f"template {name}: no '=== system ===' / '=== user ===' sections")
    sections = []
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(body)
        sections.append((m.group(1), body[m.end():end].strip("\n")))
    purpose = header.get("purpose", "")
    if purpose not in PURPOSES:
        raise PromptError(f"template {name}: unknown purpose {purpose!r}")
    return PromptTemplate(name, purpose, header.get("reply-schema", ""), header.get("version", "1"),
                          tuple(sections))


@lru_cache(maxsize=None)
def _packaged(name: str) -> PromptTemplate:
    path = resources.files("handmorph").joinpath("data").joinpath("prompts").joinpath(f"{name}.txt")
    if not path.is_file():
        raise PromptError(f"no prompt template named {name!r}")
    return parse_template(path.read_text(encoding="utf-8"), name)


def load_template(name: str, directory: Optional[Path] = None) -> PromptTemplate:
    if directory is not None:
        path = Path(directory) / f"{name}.txt"
        if path.is_file():
            return parse_template(path.read_text(encoding="utf-8"), name)
    return _packaged(name)


def render_prompt(template: PromptTemplate, bindings: Mapping[str, object]) -> Tuple[Message, ...]:
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise PromptError(f"template {template.name}: unbound placeholder {{{{{missing[0]}}}}}")

    def fill(m):
        return str(bindings[m.group(1)])

    return tuple(Message(role, PLACEHOLDER.sub(fill, text)) for role, text in template.sections)


def build_request(
    name: str,
    bindings: Mapping[str, object],
    *,
    model: str = "",
    temperature: Optional[float] = None,
    scope: str = "",
    templates_dir: Optional[Path] = None,
) -> ChatRequest:
    template = load_template(name, templates_dir)
    return ChatRequest(template.purpose, render_prompt(template, bindings), model=model,
                       temperature=temperature, scope=scope)
