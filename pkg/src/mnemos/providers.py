"""Chat-completion and embedding backends behind one small contract.

Everything the engine needs from a language model is ``chat`` (with
optional tool calling) and ``embed``. The scripted provider and the
hash embedder are deterministic and carry the whole offline test suite;
the remote adapter speaks the common chat-completions HTTP dialect.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx
import jsonschema
import numpy as np

from .errors import (
    InvalidInputError,
    ProviderProtocolError,
    ProviderUnavailableError,
    ScriptMissError,
)

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Request / response types


@dataclass(frozen=True)
class ToolSpec:
    """One callable operation a chat backend may select."""

    name: str
    description: str
    parameters: dict  # JSON Schema for the argument object

    def validate_arguments(self, arguments: dict) -> None:
        try:
            jsonschema.validate(arguments, self.parameters)
        except jsonschema.ValidationError as exc:
            raise ProviderProtocolError(
                f"tool call {self.name!r} arguments invalid: {exc.message}"
            ) from exc


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict


@dataclass
class ChatRequest:
    messages: list[tuple[str, str]]  # (role, text)
    tool_schema: list[ToolSpec] | None = None
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.messages:
            raise InvalidInputError("chat request needs at least one message")
        if self.temperature < 0:
            raise InvalidInputError("temperature must be >= 0")

    def serialized(self) -> str:
        """Flat text form used for script matching and logging."""
        return "\n".join(f"{role}: {text}" for role, text in self.messages)


@dataclass
class ChatResponse:
    text: str | None = None
    tool_calls: list[ToolCall] | None = None

    def __post_init__(self) -> None:
        if self.text is None and not self.tool_calls:
            raise InvalidInputError("response needs text or tool calls")


def validate_response(request: ChatRequest, response: ChatResponse) -> ChatResponse:
    """Check every tool call against the request's declared schema."""
    if response.tool_calls:
        declared = {t.name: t for t in request.tool_schema or []}
        for call in response.tool_calls:
            spec = declared.get(call.name)
            if spec is None:
                raise ProviderProtocolError(
                    f"tool call {call.name!r} was not declared in the request"
                )
            spec.validate_arguments(call.arguments)
    return response


class ChatProvider(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


class Embedder(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


# --------------------------------------------------------------------------
# Deterministic embedder


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def hash_embed(text: str, dimension: int = 256) -> np.ndarray:
    """Deterministic unit-norm embedding: hashed token counts.

    Each lowercase token is hashed to one of ``dimension`` buckets; the
    bucket-count vector is L2-normalized. Equal texts map to equal
    vectors, and shared tokens raise cosine similarity.
    """
    if dimension < 8:
        raise InvalidInputError("dimension must be >= 8")
    stripped = text.strip()
    if not stripped:
        raise InvalidInputError("cannot embed empty text")
    tokens = _TOKEN_RE.findall(stripped.lower())
    if not tokens:
        tokens = [stripped.lower()]
    vec = np.zeros(dimension, dtype=np.float64)
    for token in tokens:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        vec[int.from_bytes(digest, "big") % dimension] += 1.0
    return vec / np.linalg.norm(vec)


class HashEmbedder:
    """Pure-function embedder backing all offline tests."""

    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise InvalidInputError("embed needs at least one text")
        return [hash_embed(t, self.dimension) for t in texts]


# --------------------------------------------------------------------------
# Scripted chat provider


@dataclass
class ScriptEntry:
    """Canned response keyed by substring or regex over the request text."""

    response: ChatResponse
    substring: str | None = None
    regex: str | None = None

    def matches(self, serialized: str) -> bool:
        if self.substring is not None and self.substring in serialized:
            return True
        if self.regex is not None and re.search(self.regex, serialized):
            return True
        return False


class ScriptedChatProvider:
    """Offline chat backend answering from a fixed script.

    Strict mode demands exactly one matching entry per request (golden
    tests); lenient mode falls through to a default response. Matching
    is content-based, so identical requests can repeat. Thread-safe.
    """

    def __init__(
        self,
        entries: Sequence[ScriptEntry] = (),
        strict: bool = True,
        default_response: ChatResponse | None = None,
    ):
        self._entries = list(entries)
        self.strict = strict
        self._default = default_response or ChatResponse(text="")
        self._lock = threading.Lock()
        self._requests: list[str] = []

    def add(
        self,
        response: ChatResponse,
        substring: str | None = None,
        regex: str | None = None,
    ) -> "ScriptedChatProvider":
        self._entries.append(
            ScriptEntry(response=response, substring=substring, regex=regex)
        )
        return self

    @property
    def seen_requests(self) -> list[str]:
        with self._lock:
            return list(self._requests)

    def chat(self, request: ChatRequest) -> ChatResponse:
        serialized = request.serialized()
        with self._lock:
            self._requests.append(serialized)
            matches = [e for e in self._entries if e.matches(serialized)]
        if self.strict:
            if len(matches) != 1:
                raise ScriptMissError(
                    f"strict script matched {len(matches)} entries for request: "
                    f"{serialized[:200]!r}"
                )
            chosen = matches[0]
        else:
            if not matches:
                return validate_response(request, self._default)
            chosen = matches[0]
        return validate_response(request, chosen.response)

    @classmethod
    def from_file(cls, path: str, strict: bool = True) -> "ScriptedChatProvider":
        """Load a JSON script: a list of {match, response} objects.

        ``match`` is {"substring": ...} or {"regex": ...}; ``response``
        is {"text": ...} and/or {"tool_calls": [{"name", "arguments"}]}.
        """
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        entries = []
        for item in raw:
            match = item.get("match", {})
            resp = item.get("response", {})
            tool_calls = None
            if resp.get("tool_calls"):
                tool_calls = [
                    ToolCall(name=c["name"], arguments=c.get("arguments", {}))
                    for c in resp["tool_calls"]
                ]
            entries.append(
                ScriptEntry(
                    response=ChatResponse(text=resp.get("text"), tool_calls=tool_calls),
                    substring=match.get("substring"),
                    regex=match.get("regex"),
                )
            )
        return cls(entries, strict=strict)


# --------------------------------------------------------------------------
# Remote adapter (chat-completions dialect)


class RemoteChatProvider:
    """HTTP adapter for chat-completions style endpoints.

    Text fields pass through byte-identical, message order is preserved,
    and transient transport failures are retried with exponential
    backoff up to ``max_retries`` attempts.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "MNEMOS_API_KEY",
        max_retries: int = 3,
        backoff_seconds: float = 0.2,
        timeout: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self._sleep = sleep
        headers = {}
        token = os.environ.get(api_key_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(timeout=timeout, headers=headers)

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload: dict = {
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": role, "content": text} for role, text in request.messages
            ],
        }
        if request.tool_schema:
            payload["tools"] = [
                {
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters,
                    },
                }
                for t in request.tool_schema
            ]
        body = self._post_with_retries("/chat/completions", payload)
        return validate_response(request, self._parse_chat_body(body))

    def _post_with_retries(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        last_exc: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._client.post(url, json=payload)
                if resp.status_code >= 500:
                    raise httpx.TransportError(f"server error {resp.status_code}")
                if resp.status_code != 200:
                    raise ProviderProtocolError(
                        f"unexpected status {resp.status_code}: {resp.text[:200]}"
                    )
                return resp.json()
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                last_exc = exc
                if attempt + 1 < self.max_retries:
                    self._sleep(self.backoff_seconds * (2**attempt))
            except json.JSONDecodeError as exc:
                raise ProviderProtocolError(f"response body is not JSON: {exc}") from exc
        raise ProviderUnavailableError(
            f"{url} unreachable after {self.max_retries} attempts: {last_exc}"
        )

    @staticmethod
    def _parse_chat_body(body: dict) -> ChatResponse:
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderProtocolError(f"malformed completion body: {body!r:.200}") from exc
        tool_calls = None
        if message.get("tool_calls"):
            tool_calls = []
            for call in message["tool_calls"]:
                fn = call.get("function", {})
                try:
                    arguments = json.loads(fn.get("arguments", "{}"))
                except json.JSONDecodeError as exc:
                    raise ProviderProtocolError(
                        f"tool call arguments are not JSON: {fn.get('arguments')!r}"
                    ) from exc
                tool_calls.append(ToolCall(name=fn.get("name", ""), arguments=arguments))
        text = message.get("content")
        if text is None and not tool_calls:
            raise ProviderProtocolError("completion carries neither text nor tool calls")
        return ChatResponse(text=text, tool_calls=tool_calls)


class RemoteEmbedder:
    """HTTP adapter for embeddings endpoints (same dialect family)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dimension: int,
        api_key_env: str = "MNEMOS_API_KEY",
        max_retries: int = 3,
        timeout: float = 30.0,
    ):
        self.dimension = dimension
        self._chat = RemoteChatProvider(
            base_url, model, api_key_env=api_key_env, max_retries=max_retries, timeout=timeout
        )
        self.model = model

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise InvalidInputError("embed needs at least one text")
        for t in texts:
            if not t.strip():
                raise InvalidInputError("cannot embed empty text")
        body = self._chat._post_with_retries(
            "/embeddings", {"model": self.model, "input": list(texts)}
        )
        try:
            rows = sorted(body["data"], key=lambda r: r["index"])
            vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError) as exc:
            raise ProviderProtocolError(f"malformed embeddings body: {body!r:.200}") from exc
        if len(vectors) != len(texts):
            raise ProviderProtocolError(
                f"asked for {len(texts)} embeddings, got {len(vectors)}"
            )
        return vectors
