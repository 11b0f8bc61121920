from .extract import (
    ReplyError,
    ReplyParseError,
    SchemaViolation,
    extract_json,
    repair_roundtrip,
    request_json,
    validate_reply,
)
from .prompts import PromptError, PromptTemplate, build_request, load_template, render_prompt
from .providers import (
    PURPOSES,
    ChatRequest,
    HttpProvider,
    LLMProvider,
    Message,
    MissingFixtureError,
    ProviderConfigError,
    ProviderError,
    RecordingProvider,
    StubProvider,
    complete,
)

__all__ = [
    "PURPOSES", "ChatRequest", "HttpProvider", "LLMProvider", "Message", "MissingFixtureError",
    "PromptError", "PromptTemplate", "ProviderConfigError", "ProviderError", "RecordingProvider",
    "ReplyError", "ReplyParseError", "SchemaViolation", "StubProvider", "build_request", "complete",
    "extract_json", "load_template", "render_prompt", "repair_roundtrip", "request_json",
    "validate_reply",
]
