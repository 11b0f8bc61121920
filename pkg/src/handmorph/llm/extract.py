"""Pull a JSON object out of a model reply, validate it, and repair once."""

from __future__ import annotations

import json
import re
from typing import Any, Callable, Optional

import jsonschema

from .providers import ChatRequest, LLMProvider, Message, ProviderError
from .schemas import REPLY_SCHEMAS

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\n(.*?)```", re.DOTALL)
_DECODER = json.JSONDecoder()


class ReplyParseError(ValueError):
    """No usable JSON object in a reply, or the object violates its schema."""

    def __init__(self, message: str, path: str = "$"):
        self.path = path
        super().__init__(message)


class SchemaViolation(ReplyParseError):
    pass


class ReplyError(ProviderError):
    """Reply still unusable after the repair round-trip."""

    def __init__(self, message: str, replies=(), errors=()):
        self.replies = tuple(replies)
        self.errors = tuple(errors)
        super().__init__(message)


def _first_object(text: str) -> Optional[Any]:
    pos = text.find("{")
    while pos != -1:
        try:
            value, _ = _DECODER.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(value, dict):
            return value
        pos = text.find("{", pos + 1)
    return None


def _json_path(error: jsonschema.ValidationError) -> str:
    path = "$"
    for part in error.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def validate_reply(value: Any, schema_id: str) -> None:
    try:
        schema = REPLY_SCHEMAS[schema_id]
    except KeyError:
        raise KeyError(f"no reply schema registered as {schema_id!r}") from None
    validator = jsonschema.Draft202012Validator(schema)
    error = jsonschema.exceptions.best_match(validator.iter_errors(value))
    if error is not None:
        path = _json_path(error)
        if error.validator == "required":
            missing = [k for k in error.validator_value if k not in error.instance]
            message = f"missing required field {missing[0]!r} at {path}"
        elif error.validator == "additionalProperties":
            message = f"unknown field at {path}: {error.message}"
        else:
            message = f"{path}: {error.message}"
        raise SchemaViolation(f"{schema_id} reply {message}", path)


def extract_json(reply: str, schema_id: Optional[str] = None) -> Any:
    """First JSON object in ``reply`` (fenced blocks searched first), schema-checked."""
    value = None
    for m in _FENCE.finditer(reply):
        value = _first_object(m.group(2))
        if value is not None:
            break
    if value is None:
        value = _first_object(reply)
    if value is None:
        raise ReplyParseError("no JSON object found in reply")
    if schema_id is not None:
        validate_reply(value, schema_id)
    return value


REPAIR_INSTRUCTION = (
    "Your previous reply could not be used.\n\n"
    "Previous reply:\n<<<\n{reply}\n>>>\n\n"
    "Problem: {error}\n\n"
    "Reply with the corrected JSON object only, no prose."
)


def _parse(reply: str, schema_id: str, check: Optional[Callable[[Any], Any]]) -> Any:
    value = extract_json(reply, schema_id)
    if check is not None:
        result = check(value)
        if result is not None:
            return result
    return value


def repair_roundtrip(
    provider: LLMProvider,
    original: ChatRequest,
    bad_reply: str,
    error: Exception,
    schema_id: str,
    check: Optional[Callable[[Any], Any]] = None,
) -> Any:
    """One follow-up asking for corrected JSON; a second failure is terminal."""
    followup = original.with_message(
        Message("user", REPAIR_INSTRUCTION.format(reply=bad_reply, error=error)))
    second = provider.complete(followup)
    try:
        return _parse(second, schema_id, check)
    except ValueError as exc:
        raise ReplyError(
            f"{original.purpose} reply unusable after repair: {exc}",
            replies=(bad_reply, second), errors=(str(error), str(exc)),
        ) from None


def request_json(
    provider: LLMProvider,
    request: ChatRequest,
    schema_id: str,
    check: Optional[Callable[[Any], Any]] = None,
) -> Any:
    """Complete, extract and validate; ``check`` may convert the value or raise ValueError."""
    reply = provider.complete(request)
    try:
        return _parse(reply, schema_id, check)
    except ValueError as exc:
        return repair_roundtrip(provider, request, reply, exc, schema_id, check)
