"""JSON-over-HTTP facade for the memory engine.

Mutating endpoints are atomic per request against the event log; a
per-conversation write lock turns concurrent writers for the same
conversation into 409s instead of queueing them. Every response carries
an ``X-Request-Id`` header that is also attached to the structured log
line and to error bodies.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Literal

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .config import EngineConfig
from .errors import (
    InvalidInputError,
    MnemosError,
    NotFoundError,
    ProviderError,
)
from .pipeline import MemoryEngine, Message
from .providers import ChatResponse, RemoteChatProvider, ScriptedChatProvider
from .bench.stats import percentile
from .bench.tokens import count_tokens

logger = logging.getLogger("mnemos.service")

SEARCH_MODES = ("dense", "graph_entity", "graph_triplet")


# --------------------------------------------------------------------------
# Config


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8077
    data_dir: str | None = None
    bearer_token: str | None = None
    provider: str = "scripted"  # scripted | remote
    script_path: str | None = None
    remote_url: str | None = None
    remote_model: str = ""
    provider_timeout: float = 30.0
    engine: EngineConfig = field(default_factory=EngineConfig)

    @classmethod
    def from_file(cls, path: str) -> "ServiceConfig":
        raw = json.loads(open(path, encoding="utf-8").read())
        engine = EngineConfig(**raw.pop("engine", {}))
        return cls(engine=engine, **raw)

    def apply_env(self, environ=None) -> "ServiceConfig":
        """Environment variables win over file values."""
        env = os.environ if environ is None else environ
        if env.get("MNEMOS_PORT"):
            self.port = int(env["MNEMOS_PORT"])
        if env.get("MNEMOS_HOST"):
            self.host = env["MNEMOS_HOST"]
        if env.get("MNEMOS_DATA_DIR"):
            self.data_dir = env["MNEMOS_DATA_DIR"]
        if env.get("MNEMOS_BEARER_TOKEN"):
            self.bearer_token = env["MNEMOS_BEARER_TOKEN"]
        if env.get("MNEMOS_PROVIDER"):
            self.provider = env["MNEMOS_PROVIDER"]
        if env.get("MNEMOS_REMOTE_URL"):
            self.remote_url = env["MNEMOS_REMOTE_URL"]
        if env.get("MNEMOS_REMOTE_MODEL"):
            self.remote_model = env["MNEMOS_REMOTE_MODEL"]
        return self


# --------------------------------------------------------------------------
# Request/response models


class MessageIn(BaseModel):
    speaker: str
    text: str
    timestamp: str


class IngestRequest(BaseModel):
    conversation_id: str = Field(min_length=1)
    messages: list[MessageIn] = Field(min_length=1)


class SearchRequest(BaseModel):
    query: str = Field(min_length=1)
    k: int = Field(default=10, ge=1)
    namespace: str = Field(min_length=1)
    mode: Literal["dense", "graph_entity", "graph_triplet"] = "dense"
    threshold: float | None = None


# --------------------------------------------------------------------------
# Metrics


class Metrics:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.counters: dict[str, int] = {}
        self.search_seconds: deque[float] = deque(maxlen=10_000)
        self.ingest_seconds: deque[float] = deque(maxlen=10_000)

    def bump(self, name: str) -> None:
        with self._lock:
            self.counters[name] = self.counters.get(name, 0) + 1

    def observe(self, series: str, value: float) -> None:
        with self._lock:
            getattr(self, series).append(value)

    def render(self) -> dict:
        with self._lock:
            out: dict = {"counters": dict(sorted(self.counters.items()))}
            for series in ("search_seconds", "ingest_seconds"):
                samples = list(getattr(self, series))
                if samples:
                    out[series] = {
                        "count": len(samples),
                        "p50": percentile(samples, 50),
                        "p95": percentile(samples, 95),
                    }
                else:
                    out[series] = {"count": 0, "p50": None, "p95": None}
            return out


# --------------------------------------------------------------------------
# App factory


def create_app(engine: MemoryEngine, config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="mnemos", version="0.1.0")
    metrics = Metrics()
    conversation_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def conversation_lock(conversation_id: str) -> threading.Lock:
        with locks_guard:
            return conversation_locks.setdefault(conversation_id, threading.Lock())

    def error_response(request: Request, status: int, code: str, message: str) -> JSONResponse:
        request_id = getattr(request.state, "request_id", "-")
        logger.warning(
            json.dumps(
                {"event": "error", "request_id": request_id, "code": code, "message": message}
            )
        )
        return JSONResponse(
            status_code=status,
            content={"code": code, "message": message, "request_id": request_id},
            headers={"X-Request-Id": request_id},
        )

    @app.middleware("http")
    async def request_context(request: Request, call_next):
        request.state.request_id = uuid.uuid4().hex
        if config.bearer_token:
            supplied = request.headers.get("Authorization", "")
            if supplied != f"Bearer {config.bearer_token}":
                return error_response(request, 401, "unauthorized", "bad bearer token")
        started = time.perf_counter()
        response = await call_next(request)
        response.headers["X-Request-Id"] = request.state.request_id
        logger.info(
            json.dumps(
                {
                    "event": "request",
                    "request_id": request.state.request_id,
                    "method": request.method,
                    "path": request.url.path,
                    "status": response.status_code,
                    "seconds": round(time.perf_counter() - started, 6),
                }
            )
        )
        return response

    @app.exception_handler(RequestValidationError)
    async def on_validation(request: Request, exc: RequestValidationError):
        return error_response(request, 400, "validation", str(exc.errors()[:3]))

    @app.exception_handler(MnemosError)
    async def on_engine_error(request: Request, exc: MnemosError):
        if isinstance(exc, NotFoundError):
            return error_response(request, 404, "not_found", str(exc))
        if isinstance(exc, ProviderError):
            return error_response(request, 502, "provider_unavailable", str(exc))
        if isinstance(exc, InvalidInputError):
            return error_response(request, 400, "invalid_input", str(exc))
        return error_response(request, 500, "internal", str(exc))

    # -- endpoints ---------------------------------------------------------------

    @app.post("/v1/memories")
    def ingest(request: Request, body: IngestRequest):
        metrics.bump("ingest_requests")
        lock = conversation_lock(body.conversation_id)
        if not lock.acquire(blocking=False):
            return error_response(
                request, 409, "conversation_busy",
                f"another writer holds {body.conversation_id!r}",
            )
        try:
            started = time.perf_counter()
            messages = [
                Message(speaker=m.speaker, text=m.text, timestamp=m.timestamp)
                for m in body.messages
            ]
            audits = engine.submit_messages(body.conversation_id, messages)
            metrics.observe("ingest_seconds", time.perf_counter() - started)
        finally:
            lock.release()
        pending = engine.state.conversations[body.conversation_id].pending
        return {
            "conversation_id": body.conversation_id,
            "applied": [
                {
                    "fact": audit.fact.text,
                    "op": audit.decision.op.value,
                    "target_id": audit.decision.target_id,
                    "new_text": audit.decision.new_text,
                    "note": audit.note,
                }
                for audit in audits
            ],
            "buffered_message": pending.to_body() if pending else None,
        }

    @app.post("/v1/memories/search")
    def search(request: Request, body: SearchRequest):
        metrics.bump("search_requests")
        started = time.perf_counter()
        if body.mode == "dense":
            hits = engine.search(body.query, body.k, body.namespace)
            payload_lines = [h.payload.text for h in hits if h.payload]
            content: dict = {
                "hits": [
                    {
                        "id": h.id,
                        "score": h.score,
                        "text": h.payload.text if h.payload else None,
                        "created_at": h.payload.created_at if h.payload else None,
                    }
                    for h in hits
                ]
            }
        elif body.mode == "graph_entity":
            subgraph = engine.retrieve_entity_centric(body.query, body.namespace)
            payload_lines = [e.text for e in subgraph.edges]
            content = {
                "subgraph": {
                    "nodes": [
                        {"id": n.id, "name": n.name, "label": n.label} for n in subgraph.nodes
                    ],
                    "edges": [
                        {
                            "id": e.id,
                            "source": e.source,
                            "relation": e.relation,
                            "destination": e.destination,
                            "text": e.text,
                        }
                        for e in subgraph.edges
                    ],
                }
            }
        else:  # graph_triplet
            ranked = engine.retrieve_semantic_triplets(
                body.query, body.namespace, body.threshold
            )
            payload_lines = [e.text for e, _ in ranked]
            content = {
                "triplets": [
                    {"id": e.id, "text": e.text, "score": score} for e, score in ranked
                ]
            }
        elapsed = time.perf_counter() - started
        metrics.observe("search_seconds", elapsed)
        content["retrieval_ms"] = elapsed * 1e3
        content["context_tokens"] = count_tokens("\n".join(payload_lines), "whitespace")
        content["tokenizer_id"] = "whitespace"
        return content

    @app.get("/v1/memories")
    def list_memories(user_id: str):
        metrics.bump("list_requests")
        records = engine.get_all(user_id)
        return {
            "memories": [
                {
                    "id": r.id,
                    "text": r.text,
                    "created_at": r.created_at,
                    "updated_at": r.updated_at,
                    "last_op": r.last_op.value,
                    "history_length": len(r.history),
                }
                for r in records
            ]
        }

    @app.delete("/v1/memories/{memory_id}")
    def delete_memory(memory_id: str):
        metrics.bump("delete_requests")
        record = engine.delete_memory(memory_id)
        return {"deleted": memory_id, "text": record.text}

    @app.get("/v1/graph/export")
    def graph_export(namespace: str):
        metrics.bump("export_requests")
        lines = engine.state.graph.export_lines(namespace)
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""))

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/metrics")
    def metrics_endpoint():
        return metrics.render()

    app.state.engine = engine
    app.state.metrics = metrics
    return app


# --------------------------------------------------------------------------
# Entry point


def build_engine(config: ServiceConfig) -> MemoryEngine:
    if config.provider == "remote":
        if not config.remote_url:
            raise InvalidInputError("remote provider needs remote_url")
        chat = RemoteChatProvider(
            config.remote_url, config.remote_model, timeout=config.provider_timeout
        )
    elif config.script_path:
        chat = ScriptedChatProvider.from_file(config.script_path, strict=False)
    else:
        chat = ScriptedChatProvider(strict=False, default_response=ChatResponse(text="[]"))
    return MemoryEngine(config=config.engine, chat=chat, data_dir=config.data_dir)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="mnemos-serve")
    parser.add_argument("--config", help="ServiceConfig JSON file")
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--data-dir", default=None)
    args = parser.parse_args(argv)

    config = ServiceConfig.from_file(args.config) if args.config else ServiceConfig()
    config.apply_env()
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    if args.data_dir:
        config.data_dir = args.data_dir

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    app = create_app(build_engine(config), config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    main()
