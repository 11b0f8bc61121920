"""Chat-completion providers: OpenAI-compatible HTTP, fixture stub, and recorder."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import httpx

log = logging.getLogger(__name__)

PURPOSES = frozenset({
    "schema", "grammar", "assess", "revise", "params",
    "rank_semantic", "rank_size", "refine", "describe",
})
ROLES = frozenset({"system", "user"})

# Generation stages sample; judging stages stay near-deterministic.
DEFAULT_TEMPERATURES = {
    "schema": 0.2,
    "grammar": 0.7,
    "assess": 0.2,
    "revise": 0.7,
    "params": 0.7,
    "rank_semantic": 0.2,
    "rank_size": 0.2,
    "refine": 0.7,
    "describe": 0.2,
}

ENV_BASE_URL = "HANDMORPH_API_BASE"
ENV_API_KEY = "HANDMORPH_API_KEY"
ENV_MODEL = "HANDMORPH_MODEL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4o-mini"


class ProviderError(RuntimeError):
    """Terminal provider failure (retries exhausted, missing fixture, bad reply)."""


class ProviderConfigError(ProviderError):
    """Provider cannot be constructed from the given configuration."""


class MissingFixtureError(ProviderError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"message role must be one of {sorted(ROLES)}, got {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    purpose: str
    messages: Tuple[Message, ...]
    model: str = ""
    temperature: Optional[float] = None
    max_tokens: int = 1500
    # Routing key for fixture lookup (variant id); never sent over the wire.
    scope: str = ""

    def __post_init__(self):
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown request purpose {self.purpose!r}")
        msgs = tuple(self.messages)
        object.__setattr__(self, "messages", msgs)
        if not any(m.role == "user" for m in msgs):
            raise ValueError("a chat request needs at least one user message")
        if self.temperature is None:
            object.__setattr__(self, "temperature", DEFAULT_TEMPERATURES[self.purpose])

    def with_message(self, message: Message) -> "ChatRequest":
        return ChatRequest(self.purpose, self.messages + (message,), self.model,
                           self.temperature, self.max_tokens, self.scope)


class LLMProvider(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


def complete(provider: LLMProvider, request: ChatRequest) -> str:
    return provider.complete(request)


class HttpProvider:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries."""

    def __init__(
        self,
        api_key: str,
        base_url: str = DEFAULT_BASE_URL,
        model: str = DEFAULT_MODEL,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 4,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not api_key:
            raise ProviderConfigError(f"missing API key (set {ENV_API_KEY})")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key}"},
        )

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None, **kwargs) -> "HttpProvider":
        env = os.environ if env is None else env
        key = env.get(ENV_API_KEY) or env.get("OPENAI_API_KEY", "")
        if not key:
            raise ProviderConfigError(f"missing API key: set {ENV_API_KEY} or OPENAI_API_KEY")
        # An explicit model (e.g. from the run config) beats the environment.
        model = kwargs.pop("model", None) or env.get(ENV_MODEL) or DEFAULT_MODEL
        return cls(api_key=key, base_url=env.get(ENV_BASE_URL) or DEFAULT_BASE_URL, model=model, **kwargs)

    def _payload(self, request: ChatRequest) -> dict:
        return {
            "model": request.model or self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def complete(self, request: ChatRequest) -> str:
        payload = self._payload(request)
        last = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._slots:
                    resp = self._client.post(f"{self.base_url}/chat/completions", json=payload)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                else:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise ProviderError(f"unexpected completion payload: {exc}") from None
            log.warning("%s request attempt %d/%d failed: %s",
                        request.purpose, attempt, self.max_attempts, last)
            if attempt < self.max_attempts:
                self._sleep(self.backoff * 2 ** (attempt - 1))
        raise ProviderError(f"{request.purpose} request failed after {self.max_attempts} attempts: {last}")

    def close(self):
        self._client.close()


_FIXTURE_NAME = re.compile(r"^(?P<purpose>[a-z_]+)_(?P<seq>\d+)\.json$")


def _read_fixture(path: Path) -> str:
    text = path.read_text(encoding="utf-8")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return text
    # A JSON string is the raw reply; any other JSON document is the reply itself.
    return value if isinstance(value, str) else text


def _load_fixture_dir(directory: Path) -> Dict[str, List[str]]:
    found: Dict[str, Dict[int, str]] = defaultdict(dict)
    for path in sorted(directory.glob("*.json")):
        m = _FIXTURE_NAME.match(path.name)
        if m and m.group("purpose") in PURPOSES:
            found[m.group("purpose")][int(m.group("seq"))] = _read_fixture(path)
    out = {}
    for purpose, by_seq in found.items():
        seqs = sorted(by_seq)
        if seqs != list(range(len(seqs))):
            raise ProviderConfigError(f"fixture gap for {purpose} in {directory}: {seqs}")
        out[purpose] = [by_seq[i] for i in seqs]
    return out


class StubProvider:
    """Deterministic fixture-backed provider.

    Replies are looked up by (purpose, sequence index). Counters are kept per
    (scope, purpose); a scope's own fixtures win over the shared ones, so
    concurrently running variants each see a reproducible sequence. Scopes may
    be nested with "/" (batch runs use "<task>/<variant>").
    """

    def __init__(
        self,
        fixtures: Optional[Mapping[str, Sequence[str]]] = None,
        scoped: Optional[Mapping[str, Mapping[str, Sequence[str]]]] = None,
    ):
        self.fixtures = {k: list(v) for k, v in (fixtures or {}).items()}
        self.scoped = {s: {k: list(v) for k, v in f.items()} for s, f in (scoped or {}).items()}
        for purpose in list(self.fixtures) + [p for f in self.scoped.values() for p in f]:
            if purpose not in PURPOSES:
                raise ProviderConfigError(f"fixture for unknown purpose {purpose!r}")
        self._counters: Dict[Tuple[str, str], int] = defaultdict(int)
        self._lock = threading.Lock()
        self.calls: List[Tuple[str, str, int]] = []
        self.requests: List[ChatRequest] = []

    @classmethod
    def from_dir(cls, directory) -> "StubProvider":
        directory = Path(directory)
        if not directory.is_dir():
            raise ProviderConfigError(f"fixture directory not found: {directory}")
        scoped = {
            sub.relative_to(directory).as_posix(): _load_fixture_dir(sub)
            for sub in sorted(directory.rglob("*")) if sub.is_dir()
        }
        return cls(_load_fixture_dir(directory), scoped)

    def _tables(self, scope: str):
        yield self.scoped.get(scope, {})
        if "/" in scope:
            # "t03/v2" falls back to fixtures shared by every "v2".
            yield self.scoped.get(scope.rsplit("/", 1)[1], {})
        yield self.fixtures

    def complete(self, request: ChatRequest) -> str:
        key = (request.scope, request.purpose)
        with self._lock:
            seq = self._counters[key]
            self._counters[key] = seq + 1
            self.calls.append((request.scope, request.purpose, seq))
            self.requests.append(request)
        for table in self._tables(request.scope):
            replies = table.get(request.purpose, [])
            if seq < len(replies):
                return replies[seq]
        where = f"scope {request.scope!r}, " if request.scope else ""
        raise MissingFixtureError(f"no fixture for {where}{request.purpose} #{seq}")

    def call_counts(self, scope: Optional[str] = None) -> Dict[str, int]:
        counts: Dict[str, int] = defaultdict(int)
        for s, purpose, _ in self.calls:
            if scope is None or s == scope:
                counts[purpose] += 1
        return dict(counts)


@dataclass
class RecordingProvider:
    """Wraps a live provider and writes each reply as a replayable fixture."""

    inner: LLMProvider
    directory: Path
    _counters: Dict[Tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def complete(self, request: ChatRequest) -> str:
        reply = self.inner.complete(request)
        with self._lock:
            key = (request.scope, request.purpose)
            seq = self._counters[key]
            self._counters[key] = seq + 1
        target = Path(self.directory) / request.scope if request.scope else Path(self.directory)
        target.mkdir(parents=True, exist_ok=True)
        (target / f"{request.purpose}_{seq}.json").write_text(json.dumps(reply) + "\n", encoding="utf-8")
        return reply
