"""Engine configuration and its stable fingerprint.

The fingerprint is stored inside snapshots so that state written under one
set of thresholds is never silently reinterpreted under another.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class EngineConfig:
    """Tunables for the memory engine.

    Attributes:
        embedding_dim: dimension of the deterministic embedder.
        recency_window: number of prior messages included in the
            extraction prompt (the bounded FIFO size per conversation).
        update_candidates: how many similar memories are retrieved and
            shown to the updater for each candidate fact.
        summary_refresh_every: regenerate the conversation summary after
            this many ingested pairs; 0 disables automatic refresh.
        node_match_threshold: cosine above which an extracted entity is
            resolved to an existing graph node instead of a new one.
        conflict_relation_threshold: cosine between relation-label
            embeddings above which two relations are treated as the same
            relation for conflict detection.
        triplet_match_threshold: default relevance cutoff for semantic
            triplet retrieval.
        graph_node_budget: cap on nodes returned by entity-centric
            retrieval.
        graph_enabled: maintain graph memory in addition to dense
            memories during ingestion.
        namespace_mode: "per_speaker" stores facts under the speaker they
            describe; "per_conversation" pools them per conversation.
        timestamp_facts: prefix stored fact text with the source message
            date so timestamps survive into retrieval context.
        deterministic_ids: counter-based ids instead of UUIDs (tests,
            reproducible benchmark runs).
    """

    embedding_dim: int = 256
    recency_window: int = 10
    update_candidates: int = 10
    summary_refresh_every: int = 5
    node_match_threshold: float = 0.9
    conflict_relation_threshold: float = 0.9
    triplet_match_threshold: float = 0.0
    graph_node_budget: int = 50
    graph_enabled: bool = False
    namespace_mode: str = "per_speaker"
    timestamp_facts: bool = False
    deterministic_ids: bool = False
    template_dir: str | None = None
    fsync_events: bool = True

    def __post_init__(self) -> None:
        if self.embedding_dim < 8:
            raise ValueError("embedding_dim must be >= 8")
        if self.recency_window < 0:
            raise ValueError("recency_window must be >= 0")
        if self.update_candidates < 1:
            raise ValueError("update_candidates must be >= 1")
        if self.namespace_mode not in ("per_speaker", "per_conversation"):
            raise ValueError(f"unknown namespace_mode: {self.namespace_mode!r}")

    def fingerprint(self) -> str:
        """Hash of every knob that changes the meaning of stored state."""
        relevant = {
            "embedding_dim": self.embedding_dim,
            "recency_window": self.recency_window,
            "update_candidates": self.update_candidates,
            "node_match_threshold": self.node_match_threshold,
            "conflict_relation_threshold": self.conflict_relation_threshold,
            "namespace_mode": self.namespace_mode,
            "timestamp_facts": self.timestamp_facts,
        }
        canon = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)
