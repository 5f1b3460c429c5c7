"""mnemos: an embeddable long-term conversational memory engine.

Facts are extracted from message pairs, reconciled against existing
memories through tool-call decisions (add / update / delete / noop), and
optionally mirrored into a temporal knowledge graph. Everything is
event-sourced for exact crash recovery, served over HTTP, and measurable
through the bundled benchmark harness.
"""

from .config import EngineConfig
from .errors import MnemosError
from .graph import ExtractedEntity, GraphEdge, GraphNode, Subgraph, TripletCandidate
from .index import IndexEntry, ScoredHit, VectorIndex, cosine
from .pipeline import (
    CandidateFact,
    IngestAudit,
    MemoryEngine,
    MemoryRecord,
    Message,
    Op,
    ToolDecision,
)
from .providers import (
    ChatRequest,
    ChatResponse,
    HashEmbedder,
    RemoteChatProvider,
    ScriptedChatProvider,
    ToolCall,
    ToolSpec,
    hash_embed,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateFact",
    "ChatRequest",
    "ChatResponse",
    "EngineConfig",
    "ExtractedEntity",
    "GraphEdge",
    "GraphNode",
    "HashEmbedder",
    "IndexEntry",
    "IngestAudit",
    "MemoryEngine",
    "MemoryRecord",
    "Message",
    "MnemosError",
    "Op",
    "RemoteChatProvider",
    "ScoredHit",
    "ScriptedChatProvider",
    "Subgraph",
    "ToolCall",
    "ToolDecision",
    "ToolSpec",
    "TripletCandidate",
    "VectorIndex",
    "cosine",
    "hash_embed",
    "__version__",
]
