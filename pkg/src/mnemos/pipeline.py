"""The memory engine: fact extraction and tool-call driven updates.

Ingestion works on message pairs. Extraction builds a prompt from the
conversation summary, a bounded window of recent messages and the new
pair, then asks the chat backend for candidate facts. Each fact is
classified against its most similar stored memories into one of
ADD/UPDATE/DELETE/NOOP and executed.

All state mutation is event-sourced: operations stage event bodies
against a scratch copy of the affected namespaces, and a commit appends
each event to the log and applies it to the live state through the same
reducer that replay uses. A provider failure mid-pair therefore leaves
the engine byte-identical to the pre-call snapshot.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import threading
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import EngineConfig
from .errors import (
    DecisionValidationError,
    ExtractionParseError,
    InvalidInputError,
    NotFoundError,
    ProviderError,
)
from .graph import ExtractedEntity, GraphOps, GraphState, Subgraph, TripletCandidate
from .index import IndexEntry, ScoredHit, VectorIndex
from .providers import ChatProvider, ChatRequest, Embedder, HashEmbedder, ToolSpec
from .store import EventLog, state_digest, utc_now_iso
from .templating import TemplateSet

logger = logging.getLogger(__name__)

_MONTHS = [
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
]


# --------------------------------------------------------------------------
# Domain types


def parse_instant(value: str) -> datetime:
    dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        raise InvalidInputError(f"timestamp must carry a timezone: {value!r}")
    return dt


@dataclass(frozen=True)
class Message:
    speaker: str
    text: str
    timestamp: str  # normalized ISO-8601 with timezone

    def __post_init__(self) -> None:
        if not self.text:
            raise InvalidInputError("message text must be non-empty")
        if not self.speaker:
            raise InvalidInputError("message speaker must be non-empty")
        object.__setattr__(self, "timestamp", parse_instant(self.timestamp).isoformat())

    @property
    def instant(self) -> datetime:
        return parse_instant(self.timestamp)

    def line(self) -> str:
        return f"[{self.timestamp}] {self.speaker}: {self.text}"

    def to_body(self) -> dict:
        return {"speaker": self.speaker, "text": self.text, "timestamp": self.timestamp}

    @classmethod
    def from_body(cls, body: dict) -> "Message":
        return cls(speaker=body["speaker"], text=body["text"], timestamp=body["timestamp"])


@dataclass
class ConversationState:
    conversation_id: str
    summary: str = ""
    transcript: list[Message] = field(default_factory=list)
    window_floor: int = 0  # session boundary; not persisted

    @property
    def message_count(self) -> int:
        return len(self.transcript)

    @property
    def paired_count(self) -> int:
        return len(self.transcript) - (len(self.transcript) % 2)

    @property
    def pending(self) -> Message | None:
        if len(self.transcript) % 2 == 1:
            return self.transcript[-1]
        return None

    def recent_window(self, size: int) -> list[Message]:
        """The messages shown as recent context: up to ``size`` paired
        messages preceding the next pair, oldest first."""
        floor = max(self.window_floor, 0)
        window = self.transcript[floor : self.paired_count]
        return window[-size:]

    def serialize(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "summary": self.summary,
            "messages": [m.to_body() for m in self.transcript],
        }


@dataclass(frozen=True)
class CandidateFact:
    text: str
    speaker: str | None = None
    source_pair: tuple[str, ...] = ()
    extracted_at: str | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise InvalidInputError("fact text must be non-empty")


class Op(str, enum.Enum):
    ADD = "ADD"
    UPDATE = "UPDATE"
    DELETE = "DELETE"
    NOOP = "NOOP"


@dataclass(frozen=True)
class ToolDecision:
    op: Op
    target_id: str | None = None
    new_text: str | None = None

    def __post_init__(self) -> None:
        if self.op in (Op.UPDATE, Op.DELETE) and not self.target_id:
            raise InvalidInputError(f"{self.op.value} requires target_id")
        if self.op in (Op.ADD, Op.UPDATE) and not self.new_text:
            raise InvalidInputError(f"{self.op.value} requires new_text")


@dataclass(frozen=True, eq=False)
class MemoryRecord:
    id: str
    text: str
    embedding: np.ndarray
    namespace: str
    created_at: str
    updated_at: str
    last_op: Op
    history: tuple[tuple[str, str, str], ...] = ()  # (op, prior_text, instant)
    source: tuple[str, ...] = ()

    def to_body(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "embedding": self.embedding.tolist(),
            "namespace": self.namespace,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "last_op": self.last_op.value,
            "history": [list(h) for h in self.history],
            "source": list(self.source),
        }

    @classmethod
    def from_body(cls, body: dict) -> "MemoryRecord":
        return cls(
            id=body["id"],
            text=body["text"],
            embedding=np.asarray(body["embedding"], dtype=np.float64),
            namespace=body["namespace"],
            created_at=body["created_at"],
            updated_at=body["updated_at"],
            last_op=Op(body["last_op"]),
            history=tuple(tuple(h) for h in body.get("history", [])),
            source=tuple(body.get("source", [])),
        )


@dataclass(frozen=True)
class ExtractionPrompt:
    summary: str
    recent: tuple[Message, ...]
    pair: tuple[Message, Message]
    rendered: str


@dataclass(frozen=True)
class IngestAudit:
    fact: CandidateFact
    decision: ToolDecision
    note: str | None = None


# --------------------------------------------------------------------------
# Engine state + event reducer


MEMORY_SCOPE = "memories"
CONVERSATION_SCOPE = "conversations"


def memory_log_namespace(namespace: str) -> str:
    return f"{MEMORY_SCOPE}/{namespace}"


def conversation_log_namespace(conversation_id: str) -> str:
    return f"{CONVERSATION_SCOPE}/{conversation_id}"


class EngineState:
    """All live state; mutated only by :meth:`apply`."""

    def __init__(self, dimension: int):
        self.memories: dict[str, dict[str, MemoryRecord]] = {}
        self.id_to_namespace: dict[str, str] = {}
        self.conversations: dict[str, ConversationState] = {}
        self.index = VectorIndex(dimension)
        self.graph = GraphState(dimension)

    # -- reducer ---------------------------------------------------------------

    def apply(self, kind: str, body: dict) -> None:
        getattr(self, f"_apply_{kind}")(body)

    def _apply_memory_add(self, body: dict) -> None:
        record = MemoryRecord(
            id=body["id"],
            text=body["text"],
            embedding=np.asarray(body["embedding"], dtype=np.float64),
            namespace=body["namespace"],
            created_at=body["created_at"],
            updated_at=body["created_at"],
            last_op=Op.ADD,
            history=(),
            source=tuple(body.get("source", [])),
        )
        self.memories.setdefault(record.namespace, {})[record.id] = record
        self.id_to_namespace[record.id] = record.namespace
        self.index.upsert(
            IndexEntry(id=record.id, vector=record.embedding, namespace=record.namespace)
        )

    def _apply_memory_update(self, body: dict) -> None:
        ns = body["namespace"]
        old = self.memories[ns][body["id"]]
        new = replace(
            old,
            text=body["text"],
            embedding=np.asarray(body["embedding"], dtype=np.float64),
            updated_at=body["instant"],
            last_op=Op.UPDATE,
            history=old.history + (("UPDATE", old.text, body["instant"]),),
        )
        self.memories[ns][new.id] = new
        self.index.upsert(IndexEntry(id=new.id, vector=new.embedding, namespace=ns))

    def _apply_memory_delete(self, body: dict) -> None:
        ns = body["namespace"]
        del self.memories[ns][body["id"]]
        self.id_to_namespace.pop(body["id"], None)
        self.index.remove(body["id"], ns)

    def _apply_node_add(self, body: dict) -> None:
        self.graph.apply_node_add(body)

    def _apply_edge_add(self, body: dict) -> None:
        self.graph.apply_edge_add(body)

    def _apply_edge_invalidate(self, body: dict) -> None:
        self.graph.apply_edge_invalidate(body)

    def _apply_summary_set(self, body: dict) -> None:
        conv = self.conversations.setdefault(
            body["conversation_id"], ConversationState(body["conversation_id"])
        )
        conv.summary = body["summary"]

    def _apply_message_append(self, body: dict) -> None:
        conv = self.conversations.setdefault(
            body["conversation_id"], ConversationState(body["conversation_id"])
        )
        conv.transcript.append(Message.from_body(body))

    # -- scratch copies ----------------------------------------------------------

    def clone_for(self, namespaces: Iterable[str], conversation_ids: Iterable[str]) -> "EngineState":
        scratch = EngineState.__new__(EngineState)
        scratch.memories = dict(self.memories)
        for ns in namespaces:
            scratch.memories[ns] = dict(self.memories.get(ns, {}))
        scratch.id_to_namespace = dict(self.id_to_namespace)
        scratch.conversations = dict(self.conversations)
        for cid in conversation_ids:
            existing = self.conversations.get(cid)
            scratch.conversations[cid] = ConversationState(
                conversation_id=cid,
                summary=existing.summary if existing else "",
                transcript=list(existing.transcript) if existing else [],
                window_floor=existing.window_floor if existing else 0,
            )
        scratch.index = self.index.clone_namespaces(namespaces)
        scratch.graph = self.graph.clone_namespaces(namespaces)
        return scratch

    # -- serialization -------------------------------------------------------------

    def serialize_memory_namespace(self, namespace: str) -> dict:
        return {
            "records": {
                rid: r.to_body()
                for rid, r in sorted(self.memories.get(namespace, {}).items())
            },
            "graph": self.graph.serialize_namespace(namespace),
        }

    def install_memory_namespace(self, namespace: str, state: dict) -> None:
        for body in state.get("records", {}).values():
            record = MemoryRecord.from_body(body)
            self.memories.setdefault(namespace, {})[record.id] = record
            self.id_to_namespace[record.id] = namespace
            self.index.upsert(
                IndexEntry(id=record.id, vector=record.embedding, namespace=namespace)
            )
        self.graph.install_namespace(namespace, state.get("graph", {}))

    def serialize_conversation(self, conversation_id: str) -> dict:
        conv = self.conversations.get(conversation_id)
        return conv.serialize() if conv else {"conversation_id": conversation_id, "summary": "", "messages": []}

    def install_conversation(self, conversation_id: str, state: dict) -> None:
        conv = ConversationState(
            conversation_id=conversation_id,
            summary=state.get("summary", ""),
            transcript=[Message.from_body(b) for b in state.get("messages", [])],
        )
        self.conversations[conversation_id] = conv

    def memory_namespaces(self) -> list[str]:
        names = set(self.memories) | set(self.graph.nodes) | set(self.graph.edges)
        return sorted(names)

    def digest_payload(self, parts: Sequence[str]) -> dict:
        payload: dict = {}
        if "memories" in parts:
            payload["memories"] = {
                ns: {rid: r.to_body() for rid, r in sorted(records.items())}
                for ns, records in sorted(self.memories.items())
                if records
            }
        if "graph" in parts:
            payload["graph"] = {
                ns: self.graph.serialize_namespace(ns)
                for ns in self.memory_namespaces()
                if self.graph.nodes.get(ns) or self.graph.edges.get(ns)
            }
        if "conversations" in parts:
            payload["conversations"] = {
                cid: conv.serialize() for cid, conv in sorted(self.conversations.items())
            }
        return payload


class _Stage:
    """Buffered events applied to a scratch state; nothing touches the
    live engine until commit."""

    def __init__(self, scratch: EngineState):
        self.state = scratch
        self.buffer: list[tuple[str, str, dict]] = []

    def apply(self, log_namespace: str, kind: str, body: dict) -> None:
        self.state.apply(kind, body)
        self.buffer.append((log_namespace, kind, body))


# --------------------------------------------------------------------------
# Id generation


class IdGenerator:
    def __init__(self, deterministic: bool):
        self.deterministic = deterministic
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()

    def mint(self, prefix: str) -> str:
        if not self.deterministic:
            return f"{prefix}-{uuid.uuid4()}"
        with self._lock:
            value = self._counters.get(prefix, 0) + 1
            self._counters[prefix] = value
            return f"{prefix}-{value:06d}"

    def register(self, existing: str) -> None:
        """Advance counters past ids seen in the log so nothing is reused."""
        match = re.fullmatch(r"([a-z]+)-(\d+)", existing)
        if not match:
            return
        prefix, number = match.group(1), int(match.group(2))
        with self._lock:
            if number > self._counters.get(prefix, 0):
                self._counters[prefix] = number


# --------------------------------------------------------------------------
# Tool schema for the update phase


_UPDATE_TOOLS = [
    ToolSpec(
        name="add",
        description="Store the fact as a new memory.",
        parameters={
            "type": "object",
            "properties": {"text": {"type": "string"}},
            "required": ["text"],
            "additionalProperties": False,
        },
    ),
    ToolSpec(
        name="update",
        description="Replace an existing memory with a richer version.",
        parameters={
            "type": "object",
            "properties": {
                "memory_id": {"type": "string"},
                "text": {"type": "string"},
            },
            "required": ["memory_id", "text"],
            "additionalProperties": False,
        },
    ),
    ToolSpec(
        name="delete",
        description="Remove a memory the fact contradicts.",
        parameters={
            "type": "object",
            "properties": {"memory_id": {"type": "string"}},
            "required": ["memory_id"],
            "additionalProperties": False,
        },
    ),
    ToolSpec(
        name="noop",
        description="Leave the memory store unchanged.",
        parameters={"type": "object", "properties": {}, "additionalProperties": False},
    ),
]


# --------------------------------------------------------------------------
# Engine


class MemoryEngine:
    """Facade wiring providers, vector index, graph and event log."""

    def __init__(
        self,
        config: EngineConfig | None = None,
        chat: ChatProvider | None = None,
        embedder: Embedder | None = None,
        data_dir: str | Path | None = None,
    ):
        self.config = config or EngineConfig()
        if chat is None:
            raise InvalidInputError("a chat provider is required")
        self.chat = chat
        self.embedder = embedder or HashEmbedder(self.config.embedding_dim)
        self.templates = TemplateSet(self.config.template_dir)
        self.ids = IdGenerator(self.config.deterministic_ids)
        self.log = EventLog(data_dir, fsync=self.config.fsync_events)
        self.state = EngineState(self.config.embedding_dim)
        self.graph_ops = GraphOps(self.chat, self.embedder, self.templates, self.config)
        self._conv_locks: dict[str, threading.RLock] = {}
        self._ns_locks: dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()
        self._summary_pool: ThreadPoolExecutor | None = None
        # observability hook: fires after an event is durable and applied
        self.after_commit_event = None
        self._recover()

    # -- locking -----------------------------------------------------------------

    def _conversation_lock(self, conversation_id: str) -> threading.RLock:
        with self._locks_guard:
            return self._conv_locks.setdefault(conversation_id, threading.RLock())

    def _namespace_lock(self, namespace: str) -> threading.RLock:
        with self._locks_guard:
            return self._ns_locks.setdefault(namespace, threading.RLock())

    @contextmanager
    def _locked_namespaces(self, namespaces: Iterable[str]):
        locks = [self._namespace_lock(ns) for ns in sorted(set(namespaces))]
        for lock in locks:
            lock.acquire()
        try:
            yield
        finally:
            for lock in reversed(locks):
                lock.release()

    # -- recovery ----------------------------------------------------------------

    def _recover(self) -> None:
        fingerprint = self.config.fingerprint()
        for log_ns in self.log.namespaces():
            snapshot_state, covered = self.log.load_snapshot(log_ns, fingerprint)
            if snapshot_state is not None:
                self._install_namespace(log_ns, snapshot_state)
            for event in self.log.events(log_ns, after=covered):
                self.state.apply(event.kind, event.body)
        self._register_existing_ids()

    def _install_namespace(self, log_ns: str, snapshot_state: dict) -> None:
        scope, _, name = log_ns.partition("/")
        if scope == MEMORY_SCOPE:
            self.state.install_memory_namespace(name, snapshot_state)
        elif scope == CONVERSATION_SCOPE:
            self.state.install_conversation(name, snapshot_state)

    def _register_existing_ids(self) -> None:
        for event in self.log.iter_all():
            for key in ("id", "edge_id"):
                value = event.body.get(key)
                if isinstance(value, str):
                    self.ids.register(value)
        for records in self.state.memories.values():
            for rid in records:
                self.ids.register(rid)
        for ns_nodes in self.state.graph.nodes.values():
            for nid in ns_nodes:
                self.ids.register(nid)
        for ns_edges in self.state.graph.edges.values():
            for eid in ns_edges:
                self.ids.register(eid)

    def _commit(self, stage: _Stage) -> None:
        for log_ns, kind, body in stage.buffer:
            event = self.log.append(log_ns, kind, body)
            self.state.apply(kind, body)
            if self.after_commit_event is not None:
                self.after_commit_event(event)

    # -- conversation plumbing -----------------------------------------------------

    def _conversation_view(self, conversation_id: str) -> ConversationState:
        return self.state.conversations.get(conversation_id) or ConversationState(
            conversation_id
        )

    def start_session(self, conversation_id: str) -> None:
        """Mark a session boundary: the recent window will not reach back
        past this point."""
        with self._conversation_lock(conversation_id):
            conv = self.state.conversations.get(conversation_id)
            if conv is not None:
                conv.window_floor = len(conv.transcript)

    def _check_order(self, conv: ConversationState, *messages: Message) -> None:
        last = conv.transcript[-1].instant if conv.transcript else None
        for msg in messages:
            if last is not None and msg.instant < last:
                raise InvalidInputError(
                    f"message timestamps must be non-decreasing "
                    f"({msg.timestamp} after {last.isoformat()})"
                )
            last = msg.instant

    # -- extraction phase ------------------------------------------------------------

    def build_extraction_prompt(
        self, conversation_id: str, m_prev: Message, m_curr: Message
    ) -> ExtractionPrompt:
        view = self._conversation_view(conversation_id)
        return self._build_prompt(view, m_prev, m_curr)

    def _build_prompt(
        self, view: ConversationState, m_prev: Message, m_curr: Message
    ) -> ExtractionPrompt:
        recent = tuple(view.recent_window(self.config.recency_window))
        recent_text = "\n".join(m.line() for m in recent) or "(none)"
        summary_text = view.summary or "(none)"
        pair_text = f"{m_prev.line()}\n{m_curr.line()}"
        rendered = self.templates.render(
            "fact_extraction",
            summary=summary_text,
            recent=recent_text,
            pair=pair_text,
        )
        return ExtractionPrompt(
            summary=view.summary, recent=recent, pair=(m_prev, m_curr), rendered=rendered
        )

    def extract_facts(
        self, prompt: ExtractionPrompt, source_pair: tuple[str, ...] = ()
    ) -> list[CandidateFact]:
        response = self.chat.chat(ChatRequest(messages=[("user", prompt.rendered)]))
        items = _parse_fact_array(response.text or "")
        facts: list[CandidateFact] = []
        seen: set[str] = set()
        extracted_at = prompt.pair[1].timestamp
        for item in items:
            if isinstance(item, str):
                text, speaker = item, None
            elif isinstance(item, dict) and item.get("text"):
                text, speaker = str(item["text"]), item.get("speaker")
            else:
                raise ExtractionParseError(f"unusable fact item: {item!r}")
            text = text.strip()
            if not text or text in seen:
                continue
            seen.add(text)
            facts.append(
                CandidateFact(
                    text=text,
                    speaker=speaker,
                    source_pair=source_pair,
                    extracted_at=extracted_at,
                )
            )
        return facts

    # -- namespace attribution ---------------------------------------------------------

    def _fact_namespace(self, fact: CandidateFact, m_prev: Message, m_curr: Message,
                        conversation_id: str) -> str:
        if self.config.namespace_mode == "per_conversation":
            return conversation_id
        speakers = {m_prev.speaker, m_curr.speaker}
        if fact.speaker and fact.speaker in speakers:
            return fact.speaker
        if fact.speaker:
            logger.warning(
                "fact names unknown speaker %r; attributing to %r",
                fact.speaker, m_prev.speaker,
            )
        return m_prev.speaker

    def _pair_namespaces(self, conversation_id: str, m_prev: Message, m_curr: Message) -> set[str]:
        if self.config.namespace_mode == "per_conversation":
            return {conversation_id}
        return {m_prev.speaker, m_curr.speaker}

    def _stored_text(self, fact: CandidateFact, event_time: str) -> str:
        if not self.config.timestamp_facts:
            return fact.text
        instant = parse_instant(event_time)
        stamp = f"{instant.day} {_MONTHS[instant.month - 1]} {instant.year}"
        return f"({stamp}) {fact.text}"

    # -- update phase -------------------------------------------------------------------

    def _classify_fact(
        self, stage: _Stage, fact: CandidateFact, namespace: str, event_time: str
    ) -> IngestAudit:
        query_vec = self.embedder.embed([fact.text])[0]
        k = self.config.update_candidates
        hits = (
            stage.state.index.top_k(query_vec, k, namespace)
            if stage.state.index.size(namespace)
            else []
        )
        records = stage.state.memories.get(namespace, {})
        lines = [
            f"{hit.id} | {hit.score:.4f} | {records[hit.id].text}" for hit in hits
        ]
        prompt = self.templates.render(
            "memory_update",
            fact=fact.text,
            candidates="\n".join(lines) or "(none)",
        )
        response = self.chat.chat(
            ChatRequest(messages=[("user", prompt)], tool_schema=_UPDATE_TOOLS)
        )
        try:
            decision = _decision_from_response(response, {hit.id for hit in hits})
        except DecisionValidationError as exc:
            logger.warning("invalid update decision (%s); treating as NOOP", exc)
            return IngestAudit(fact=fact, decision=ToolDecision(op=Op.NOOP), note=str(exc))

        if decision.op is Op.ADD:
            memory_id = self.ids.mint("mem")
            stored = self._stored_text(replace(fact, text=decision.new_text), event_time)
            stage.apply(
                memory_log_namespace(namespace),
                "memory_add",
                {
                    "id": memory_id,
                    "namespace": namespace,
                    "text": stored,
                    "embedding": self.embedder.embed([stored])[0].tolist(),
                    "created_at": event_time,
                    "source": list(fact.source_pair),
                },
            )
            decision = replace(decision, target_id=memory_id)
        elif decision.op is Op.UPDATE:
            new_text = decision.new_text or ""
            stage.apply(
                memory_log_namespace(namespace),
                "memory_update",
                {
                    "id": decision.target_id,
                    "namespace": namespace,
                    "text": new_text,
                    "embedding": self.embedder.embed([new_text])[0].tolist(),
                    "prior_text": records[decision.target_id].text,
                    "instant": event_time,
                },
            )
        elif decision.op is Op.DELETE:
            stage.apply(
                memory_log_namespace(namespace),
                "memory_delete",
                {
                    "id": decision.target_id,
                    "namespace": namespace,
                    "prior_text": records[decision.target_id].text,
                    "external": False,
                },
            )
        return IngestAudit(fact=fact, decision=decision)

    def classify_and_execute(self, fact: CandidateFact, namespace: str) -> ToolDecision:
        """Classify one fact against a namespace and apply the outcome."""
        event_time = fact.extracted_at or _now_iso()
        with self._locked_namespaces([namespace]):
            stage = _Stage(self.state.clone_for([namespace], []))
            audit = self._classify_fact(stage, fact, namespace, event_time)
            self._commit(stage)
        return audit.decision

    # -- ingestion ----------------------------------------------------------------------

    def ingest_pair(
        self, conversation_id: str, m_prev: Message, m_curr: Message
    ) -> list[IngestAudit]:
        with self._conversation_lock(conversation_id):
            conv = self._conversation_view(conversation_id)
            if conv.pending is not None:
                raise InvalidInputError(
                    "conversation has a buffered unpaired message; "
                    "use submit_messages to consume it"
                )
            return self._ingest_pair_locked(conversation_id, m_prev, m_curr, prev_buffered=False)

    def submit_messages(self, conversation_id: str, messages: Sequence[Message]) -> list[IngestAudit]:
        """Pair and ingest a batch; an odd trailing message is buffered
        into the conversation and consumed by the next batch."""
        if not messages:
            raise InvalidInputError("no messages to ingest")
        audits: list[IngestAudit] = []
        with self._conversation_lock(conversation_id):
            conv = self._conversation_view(conversation_id)
            queue = list(messages)
            if conv.pending is not None:
                first = queue.pop(0)
                audits.extend(
                    self._ingest_pair_locked(
                        conversation_id, conv.pending, first, prev_buffered=True
                    )
                )
            while len(queue) >= 2:
                m_prev, m_curr = queue.pop(0), queue.pop(0)
                audits.extend(
                    self._ingest_pair_locked(
                        conversation_id, m_prev, m_curr, prev_buffered=False
                    )
                )
            if queue:
                self._buffer_message(conversation_id, queue[0])
        return audits

    def _buffer_message(self, conversation_id: str, message: Message) -> None:
        conv = self._conversation_view(conversation_id)
        self._check_order(conv, message)
        stage = _Stage(self.state.clone_for([], [conversation_id]))
        stage.apply(
            conversation_log_namespace(conversation_id),
            "message_append",
            {"conversation_id": conversation_id, **message.to_body()},
        )
        self._commit(stage)

    def _ingest_pair_locked(
        self,
        conversation_id: str,
        m_prev: Message,
        m_curr: Message,
        prev_buffered: bool,
    ) -> list[IngestAudit]:
        conv = self._conversation_view(conversation_id)
        if prev_buffered:
            self._check_order(conv, m_curr)
        else:
            self._check_order(conv, m_prev, m_curr)
        if m_curr.instant < m_prev.instant:
            raise InvalidInputError("pair timestamps must be ordered")

        base = len(conv.transcript)
        if prev_buffered:
            prev_id = f"{conversation_id}#{base - 1}"
            curr_id = f"{conversation_id}#{base}"
        else:
            prev_id = f"{conversation_id}#{base}"
            curr_id = f"{conversation_id}#{base + 1}"

        prompt = self._build_prompt(conv, m_prev, m_curr)
        facts = self.extract_facts(prompt, source_pair=(prev_id, curr_id))

        namespaces = self._pair_namespaces(conversation_id, m_prev, m_curr)
        event_time = m_curr.timestamp
        with self._locked_namespaces(namespaces):
            stage = _Stage(self.state.clone_for(namespaces, [conversation_id]))
            conv_ns = conversation_log_namespace(conversation_id)
            if not prev_buffered:
                stage.apply(
                    conv_ns,
                    "message_append",
                    {"conversation_id": conversation_id, **m_prev.to_body()},
                )
            stage.apply(
                conv_ns,
                "message_append",
                {"conversation_id": conversation_id, **m_curr.to_body()},
            )
            audits = []
            for fact in facts:
                namespace = self._fact_namespace(fact, m_prev, m_curr, conversation_id)
                audits.append(self._classify_fact(stage, fact, namespace, event_time))
            if self.config.graph_enabled:
                for message, message_id in ((m_prev, prev_id), (m_curr, curr_id)):
                    graph_ns = (
                        conversation_id
                        if self.config.namespace_mode == "per_conversation"
                        else message.speaker
                    )
                    self._ingest_graph(stage, message, message_id, graph_ns, conv.summary)
            self._commit(stage)

        self._maybe_refresh_summary(conversation_id)
        return audits

    # -- graph ingestion -------------------------------------------------------------------

    def _ingest_graph(
        self,
        stage: _Stage,
        message: Message,
        message_id: str,
        namespace: str,
        context: str,
    ) -> None:
        entities = self.graph_ops.extract_entities(message.text, context=context)
        triplets = self.graph_ops.generate_relationships(entities, message.text)
        labels = {e.name: e.label for e in entities}
        for triplet in triplets:
            self._upsert_triplet_staged(
                stage,
                triplet,
                namespace,
                provenance=(message_id,),
                event_time=message.timestamp,
                labels=labels,
            )

    def _upsert_triplet_staged(
        self,
        stage: _Stage,
        candidate: TripletCandidate,
        namespace: str,
        provenance: tuple[str, ...],
        event_time: str,
        labels: dict[str, str] | None = None,
    ) -> str | None:
        """Resolve endpoints, run conflict resolution, stage the new edge.

        Returns the staged edge id, or None when an identical valid edge
        already exists (duplicate suppression)."""
        labels = labels or {}
        graph = stage.state.graph
        endpoint_ids = []
        for name in (candidate.source, candidate.destination):
            entity = ExtractedEntity(name=name, label=labels.get(name, "Entity"))
            node_id, created, body = self.graph_ops.resolve_node(
                graph, entity, namespace, event_time, self.ids.mint
            )
            if created:
                stage.apply(memory_log_namespace(namespace), "node_add", body)
            endpoint_ids.append(node_id)
        source_id, destination_id = endpoint_ids

        for edge in graph.edges.get(namespace, {}).values():
            if (
                not edge.invalid
                and edge.source == source_id
                and edge.destination == destination_id
                and edge.relation == candidate.relation
            ):
                return None  # identical fact already present

        conflicts = self.graph_ops.detect_conflicts(
            graph, namespace, source_id, candidate.relation, destination_id
        )
        for edge_id in self.graph_ops.resolve_updates(candidate.describe(), conflicts):
            stage.apply(
                memory_log_namespace(namespace),
                "edge_invalidate",
                {"namespace": namespace, "edge_id": edge_id, "instant": event_time},
            )

        source_node = graph.node(namespace, source_id)
        destination_node = graph.node(namespace, destination_id)
        text = f"{source_node.name} {candidate.relation} {destination_node.name}"
        edge_id = self.ids.mint("edge")
        stage.apply(
            memory_log_namespace(namespace),
            "edge_add",
            {
                "id": edge_id,
                "source": source_id,
                "relation": candidate.relation,
                "destination": destination_id,
                "created_at": event_time,
                "namespace": namespace,
                "text": text,
                "embedding": self.embedder.embed([text])[0].tolist(),
                "relation_embedding": self.embedder.embed(
                    [candidate.relation.replace("_", " ")]
                )[0].tolist(),
                "provenance": list(provenance),
                "invalid": False,
                "invalidated_at": None,
            },
        )
        return edge_id

    def upsert_triplet(
        self,
        candidate: TripletCandidate,
        namespace: str,
        provenance: tuple[str, ...] = (),
        event_time: str | None = None,
        labels: dict[str, str] | None = None,
    ) -> str | None:
        """Standalone graph write outside pair ingestion."""
        event_time = event_time or _now_iso()
        with self._locked_namespaces([namespace]):
            stage = _Stage(self.state.clone_for([namespace], []))
            edge_id = self._upsert_triplet_staged(
                stage, candidate, namespace, provenance, event_time, labels
            )
            self._commit(stage)
        return edge_id

    def retrieve_entity_centric(self, query: str, namespace: str) -> Subgraph:
        if not query.strip():
            raise InvalidInputError("query must be non-empty")
        return self.graph_ops.entity_subgraph(self.state.graph, query, namespace)

    def retrieve_semantic_triplets(
        self, query: str, namespace: str, threshold: float | None = None
    ):
        if threshold is None:
            threshold = self.config.triplet_match_threshold
        return self.graph_ops.semantic_triplets(self.state.graph, query, namespace, threshold)

    # -- summary -------------------------------------------------------------------------

    def refresh_summary(self, conversation_id: str) -> None:
        with self._conversation_lock(conversation_id):
            conv = self._conversation_view(conversation_id)
            transcript = list(conv.transcript)
        if not transcript:
            summary = ""
        else:
            prompt = self.templates.render(
                "conversation_summary",
                conversation="\n".join(m.line() for m in transcript),
            )
            try:
                response = self.chat.chat(ChatRequest(messages=[("user", prompt)]))
            except ProviderError as exc:
                logger.warning("summary refresh failed, keeping stale summary: %s", exc)
                return
            summary = (response.text or "").strip()
        with self._conversation_lock(conversation_id):
            stage = _Stage(self.state.clone_for([], [conversation_id]))
            stage.apply(
                conversation_log_namespace(conversation_id),
                "summary_set",
                {"conversation_id": conversation_id, "summary": summary},
            )
            self._commit(stage)

    def refresh_summary_async(self, conversation_id: str) -> Future:
        if self._summary_pool is None:
            self._summary_pool = ThreadPoolExecutor(
                max_workers=1, thread_name_prefix="summary"
            )
        return self._summary_pool.submit(self._refresh_quietly, conversation_id)

    def _refresh_quietly(self, conversation_id: str) -> None:
        try:
            self.refresh_summary(conversation_id)
        except Exception:  # background task: never propagate
            logger.exception("summary refresh crashed for %s", conversation_id)

    def _maybe_refresh_summary(self, conversation_id: str) -> None:
        every = self.config.summary_refresh_every
        if every <= 0:
            return
        conv = self.state.conversations.get(conversation_id)
        if conv is None:
            return
        if (conv.paired_count // 2) % every == 0:
            self.refresh_summary_async(conversation_id)

    # -- reads ---------------------------------------------------------------------------

    def get_all(self, namespace: str) -> list[MemoryRecord]:
        records = list(self.state.memories.get(namespace, {}).values())
        records.sort(key=lambda r: (r.created_at, r.id))
        return records

    def get_memory(self, memory_id: str) -> MemoryRecord:
        namespace = self.state.id_to_namespace.get(memory_id)
        if namespace is None:
            raise NotFoundError(f"no memory with id {memory_id!r}")
        return self.state.memories[namespace][memory_id]

    def search(self, query: str, k: int, namespace: str) -> list[ScoredHit]:
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        if self.state.index.size(namespace) == 0:
            return []
        vector = self.embedder.embed([query])[0]
        hits = self.state.index.top_k(vector, k, namespace)
        records = self.state.memories.get(namespace, {})
        return [
            ScoredHit(id=h.id, score=h.score, payload=records.get(h.id)) for h in hits
        ]

    # -- external mutations -----------------------------------------------------------------

    def delete_memory(self, memory_id: str) -> MemoryRecord:
        """Externally requested delete; logged like any other delete."""
        namespace = self.state.id_to_namespace.get(memory_id)
        if namespace is None:
            raise NotFoundError(f"no memory with id {memory_id!r}")
        with self._locked_namespaces([namespace]):
            record = self.state.memories[namespace][memory_id]
            stage = _Stage(self.state.clone_for([namespace], []))
            stage.apply(
                memory_log_namespace(namespace),
                "memory_delete",
                {
                    "id": memory_id,
                    "namespace": namespace,
                    "prior_text": record.text,
                    "external": True,
                },
            )
            self._commit(stage)
        return record

    def import_memories(
        self,
        namespace: str,
        texts: Sequence[str],
        timestamps: Sequence[str] | None = None,
    ) -> list[str]:
        """Bulk-load pre-extracted facts (benchmark seeding, migrations)."""
        if not texts:
            return []
        vectors = self.embedder.embed(list(texts))
        now = _now_iso()
        ids = []
        with self._locked_namespaces([namespace]):
            stage = _Stage(self.state.clone_for([namespace], []))
            for i, text in enumerate(texts):
                memory_id = self.ids.mint("mem")
                ids.append(memory_id)
                stage.apply(
                    memory_log_namespace(namespace),
                    "memory_add",
                    {
                        "id": memory_id,
                        "namespace": namespace,
                        "text": text,
                        "embedding": vectors[i].tolist(),
                        "created_at": timestamps[i] if timestamps else now,
                        "source": [],
                    },
                )
            self._commit(stage)
        return ids

    # -- persistence -------------------------------------------------------------------------

    def write_snapshots(self) -> None:
        fingerprint = self.config.fingerprint()
        for log_ns in self.log.namespaces():
            scope, _, name = log_ns.partition("/")
            if scope == MEMORY_SCOPE:
                payload = self.state.serialize_memory_namespace(name)
            elif scope == CONVERSATION_SCOPE:
                payload = self.state.serialize_conversation(name)
            else:
                continue
            self.log.write_snapshot(log_ns, fingerprint, payload)

    def state_digest(self, parts: Sequence[str] = ("memories", "graph", "conversations")) -> str:
        return state_digest(self.state.digest_payload(parts))

    def close(self) -> None:
        if self._summary_pool is not None:
            self._summary_pool.shutdown(wait=True)
            self._summary_pool = None
        self.log.close()


# --------------------------------------------------------------------------
# Parsing helpers


def _now_iso() -> str:
    return utc_now_iso()


def _parse_fact_array(text: str) -> list:
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("["), text.rfind("]")
        if start == -1 or end <= start:
            raise ExtractionParseError(f"no JSON array in extractor output: {text[:200]!r}")
        try:
            value = json.loads(text[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ExtractionParseError(f"bad JSON in extractor output: {exc}") from exc
    if not isinstance(value, list):
        raise ExtractionParseError("extractor output is not a JSON array")
    return value


def _decision_from_response(response, presented_ids: set[str]) -> ToolDecision:
    if not response.tool_calls:
        raise DecisionValidationError("no tool call in update response")
    call = response.tool_calls[0]
    name = call.name.lower()
    args = call.arguments
    if name == "add":
        text = str(args.get("text", "")).strip()
        if not text:
            raise DecisionValidationError("add without text")
        return ToolDecision(op=Op.ADD, new_text=text)
    if name == "update":
        target = str(args.get("memory_id", ""))
        text = str(args.get("text", "")).strip()
        if target not in presented_ids:
            raise DecisionValidationError(f"update targets unpresented id {target!r}")
        if not text:
            raise DecisionValidationError("update without text")
        return ToolDecision(op=Op.UPDATE, target_id=target, new_text=text)
    if name == "delete":
        target = str(args.get("memory_id", ""))
        if target not in presented_ids:
            raise DecisionValidationError(f"delete targets unpresented id {target!r}")
        return ToolDecision(op=Op.DELETE, target_id=target)
    if name == "noop":
        return ToolDecision(op=Op.NOOP)
    raise DecisionValidationError(f"unknown operation {call.name!r}")
