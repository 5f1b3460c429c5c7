"""Graph memory: directed labeled entity graph with temporal invalidation.

Facts live as (source, relation, destination) edges between typed entity
nodes. Superseded edges are marked invalid with a timestamp instead of
being deleted, so history stays queryable; retrieval (entity-centric
subgraph expansion and whole-query triplet matching) only ever surfaces
valid edges.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .config import EngineConfig
from .errors import ExtractionParseError, ResolutionValidationError
from .index import IndexEntry, VectorIndex, cosine
from .providers import ChatProvider, ChatRequest, Embedder, ToolSpec
from .templating import TemplateSet

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, eq=False)
class GraphNode:
    id: str
    name: str
    label: str
    embedding: np.ndarray
    created_at: str
    namespace: str

    def to_body(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "label": self.label,
            "embedding": self.embedding.tolist(),
            "created_at": self.created_at,
            "namespace": self.namespace,
        }

    @classmethod
    def from_body(cls, body: dict) -> "GraphNode":
        return cls(
            id=body["id"],
            name=body["name"],
            label=body["label"],
            embedding=np.asarray(body["embedding"], dtype=np.float64),
            created_at=body["created_at"],
            namespace=body["namespace"],
        )


@dataclass(frozen=True, eq=False)
class GraphEdge:
    id: str
    source: str
    relation: str
    destination: str
    created_at: str
    namespace: str
    text: str  # "source_name relation destination_name"
    embedding: np.ndarray  # of ``text``
    relation_embedding: np.ndarray  # of the relation label alone
    provenance: tuple[str, ...] = ()
    invalid: bool = False
    invalidated_at: str | None = None

    def to_body(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "relation": self.relation,
            "destination": self.destination,
            "created_at": self.created_at,
            "namespace": self.namespace,
            "text": self.text,
            "embedding": self.embedding.tolist(),
            "relation_embedding": self.relation_embedding.tolist(),
            "provenance": list(self.provenance),
            "invalid": self.invalid,
            "invalidated_at": self.invalidated_at,
        }

    @classmethod
    def from_body(cls, body: dict) -> "GraphEdge":
        return cls(
            id=body["id"],
            source=body["source"],
            relation=body["relation"],
            destination=body["destination"],
            created_at=body["created_at"],
            namespace=body["namespace"],
            text=body["text"],
            embedding=np.asarray(body["embedding"], dtype=np.float64),
            relation_embedding=np.asarray(body["relation_embedding"], dtype=np.float64),
            provenance=tuple(body.get("provenance", ())),
            invalid=body.get("invalid", False),
            invalidated_at=body.get("invalidated_at"),
        )


@dataclass(frozen=True)
class ExtractedEntity:
    name: str
    label: str


@dataclass(frozen=True)
class TripletCandidate:
    source: str
    relation: str
    destination: str

    def describe(self) -> str:
        return f"({self.source}, {self.relation}, {self.destination})"


@dataclass
class Subgraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]


_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_SEP_RE = re.compile(r"[\s\-]+")


def normalize_relation(label: str) -> str:
    """Lower_snake_case normalization for relation labels."""
    label = _CAMEL_RE.sub("_", label.strip())
    label = _SEP_RE.sub("_", label)
    label = re.sub(r"_+", "_", label)
    return label.strip("_").lower()


# --------------------------------------------------------------------------
# State


class GraphState:
    """Nodes and edges per namespace, plus the scan indexes retrieval uses.

    Mutations happen exclusively through the ``apply_*`` reducers so that
    live execution and log replay share one code path. Edges are
    append-only: invalidation rewrites the edge in place but never drops
    it from the edge table.
    """

    def __init__(self, dimension: int):
        self.dimension = dimension
        self.nodes: dict[str, dict[str, GraphNode]] = {}
        self.edges: dict[str, dict[str, GraphEdge]] = {}
        self._live_names: dict[str, dict[str, str]] = {}  # ns -> lower name -> node id
        self.node_index = VectorIndex(dimension)
        self.edge_index = VectorIndex(dimension)  # valid edges only

    # -- reducers ------------------------------------------------------------

    def apply_node_add(self, body: dict) -> None:
        node = GraphNode.from_body(body)
        ns = node.namespace
        self.nodes.setdefault(ns, {})[node.id] = node
        self._live_names.setdefault(ns, {})[node.name.lower()] = node.id
        self.node_index.upsert(
            IndexEntry(id=node.id, vector=node.embedding, namespace=ns)
        )

    def apply_edge_add(self, body: dict) -> None:
        edge = GraphEdge.from_body(body)
        ns = edge.namespace
        self.edges.setdefault(ns, {})[edge.id] = edge
        if not edge.invalid:
            self.edge_index.upsert(
                IndexEntry(id=edge.id, vector=edge.embedding, namespace=ns)
            )

    def apply_edge_invalidate(self, body: dict) -> None:
        ns = body["namespace"]
        edge = self.edges[ns][body["edge_id"]]
        # validity intervals never run backwards, even if the superseding
        # message carries an earlier timestamp
        instant = max(body["instant"], edge.created_at)
        self.edges[ns][edge.id] = replace(edge, invalid=True, invalidated_at=instant)
        self.edge_index.remove(edge.id, ns)

    # -- queries ---------------------------------------------------------------

    def node(self, namespace: str, node_id: str) -> GraphNode:
        return self.nodes[namespace][node_id]

    def live_node_by_name(self, namespace: str, name: str) -> GraphNode | None:
        node_id = self._live_names.get(namespace, {}).get(name.lower())
        return self.nodes[namespace][node_id] if node_id else None

    def nearest_node(self, namespace: str, vector: np.ndarray) -> tuple[GraphNode, float] | None:
        hits = self.node_index.top_k(vector, 1, namespace)
        if not hits:
            return None
        return self.nodes[namespace][hits[0].id], hits[0].score

    def valid_edges(self, namespace: str) -> list[GraphEdge]:
        return [e for e in self.edges.get(namespace, {}).values() if not e.invalid]

    def edges_touching(self, namespace: str, node_id: str) -> list[GraphEdge]:
        return [
            e
            for e in self.edges.get(namespace, {}).values()
            if not e.invalid and (e.source == node_id or e.destination == node_id)
        ]

    def clone_namespaces(self, namespaces: Iterable[str]) -> "GraphState":
        clone = GraphState(self.dimension)
        names = list(namespaces)
        for ns in names:
            if ns in self.nodes:
                clone.nodes[ns] = dict(self.nodes[ns])
            if ns in self.edges:
                clone.edges[ns] = dict(self.edges[ns])
            if ns in self._live_names:
                clone._live_names[ns] = dict(self._live_names[ns])
        clone.node_index = self.node_index.clone_namespaces(names)
        clone.edge_index = self.edge_index.clone_namespaces(names)
        return clone

    # -- serialization -----------------------------------------------------------

    def serialize_namespace(self, namespace: str) -> dict:
        return {
            "nodes": {
                nid: n.to_body() for nid, n in self.nodes.get(namespace, {}).items()
            },
            "edges": {
                eid: e.to_body() for eid, e in self.edges.get(namespace, {}).items()
            },
        }

    def install_namespace(self, namespace: str, state: dict) -> None:
        for body in state.get("nodes", {}).values():
            self.apply_node_add(body)
        for body in state.get("edges", {}).values():
            self.apply_edge_add(body)
            if body.get("invalid"):
                # re-mark so the edge index stays clean
                self.edges[namespace][body["id"]] = GraphEdge.from_body(body)
                self.edge_index.remove(body["id"], namespace)

    def export_lines(self, namespace: str) -> list[str]:
        """Line-delimited JSON export: nodes first, then edges."""
        lines = []
        for node in self.nodes.get(namespace, {}).values():
            lines.append(json.dumps({"type": "node", **node.to_body()}, sort_keys=True))
        for edge in self.edges.get(namespace, {}).values():
            body = edge.to_body()
            body.pop("embedding")
            body.pop("relation_embedding")
            lines.append(json.dumps({"type": "edge", **body}, sort_keys=True))
        return lines

    def to_dot(self, namespace: str) -> str:
        """DOT-format debug dump (write-only convenience)."""
        out = ["digraph memory {"]
        for node in self.nodes.get(namespace, {}).values():
            out.append(f'  "{node.id}" [label="{node.name}\\n({node.label})"];')
        for edge in self.edges.get(namespace, {}).values():
            style = ' style=dashed color=gray label="%s (invalid)"' % edge.relation
            if not edge.invalid:
                style = f' label="{edge.relation}"'
            out.append(f'  "{edge.source}" -> "{edge.destination}" [{style.strip()}];')

        out.append("}")
        return "\n".join(out)


# --------------------------------------------------------------------------
# Operations (LLM-coupled)


_RESOLVER_TOOLS = [
    ToolSpec(
        name="invalidate_edges",
        description="Mark existing relationships as obsolete.",
        parameters={
            "type": "object",
            "properties": {
                "edge_ids": {"type": "array", "items": {"type": "string"}}
            },
            "required": ["edge_ids"],
            "additionalProperties": False,
        },
    )
]


class GraphOps:
    """Entity/relationship extraction and graph update resolution.

    Stateless over a ``GraphState``; the caller supplies the state (the
    live one or a transaction scratch) and stages the event bodies this
    class produces.
    """

    def __init__(
        self,
        chat: ChatProvider,
        embedder: Embedder,
        templates: TemplateSet,
        config: EngineConfig,
    ):
        self.chat = chat
        self.embedder = embedder
        self.templates = templates
        self.config = config

    # -- extraction ------------------------------------------------------------

    def extract_entities(self, text: str, context: str = "") -> list[ExtractedEntity]:
        prompt = self.templates.render("entity_extraction", text=text, context=context or "(none)")
        response = self.chat.chat(ChatRequest(messages=[("user", prompt)]))
        items = _parse_json_array(response.text or "")
        entities: list[ExtractedEntity] = []
        seen: set[str] = set()
        for item in items:
            if isinstance(item, str):
                name, label = item, "Entity"
            elif isinstance(item, dict) and item.get("name"):
                name = str(item["name"])
                label = str(item.get("label") or "Entity")
            else:
                raise ExtractionParseError(f"unusable entity item: {item!r}")
            key = name.strip().lower()
            if not key or key in seen:
                continue
            seen.add(key)
            entities.append(ExtractedEntity(name=name.strip(), label=label))
        return entities

    def generate_relationships(
        self, entities: Sequence[ExtractedEntity], text: str
    ) -> list[TripletCandidate]:
        if not entities:
            return []
        listing = "\n".join(f"- {e.name} ({e.label})" for e in entities)
        prompt = self.templates.render("relationship_generation", entities=listing, text=text)
        response = self.chat.chat(ChatRequest(messages=[("user", prompt)]))
        items = _parse_json_array(response.text or "")
        known = {e.name.lower(): e.name for e in entities}
        out: list[TripletCandidate] = []
        for item in items:
            if not isinstance(item, dict):
                raise ExtractionParseError(f"unusable triplet item: {item!r}")
            source = known.get(str(item.get("source", "")).lower())
            destination = known.get(str(item.get("destination", "")).lower())
            relation = normalize_relation(str(item.get("relation", "")))
            if not source or not destination or not relation:
                logger.warning("dropping triplet with unknown endpoint: %r", item)
                continue
            if source.lower() == destination.lower():
                logger.warning("dropping self-loop triplet: %r", item)
                continue
            out.append(TripletCandidate(source=source, relation=relation, destination=destination))
        return out

    # -- update path -------------------------------------------------------------

    def resolve_node(
        self,
        state: GraphState,
        entity: ExtractedEntity,
        namespace: str,
        event_time: str,
        mint_id,
    ) -> tuple[str, bool, dict | None]:
        """Match the entity to an existing node or mint a new one.

        Returns (node_id, created, node_add body or None).
        """
        vector = self.embedder.embed([entity.name])[0]
        nearest = state.nearest_node(namespace, vector)
        if nearest is not None:
            node, score = nearest
            if score >= self.config.node_match_threshold:
                if node.label != entity.label:
                    logger.info(
                        "keeping label %r for node %r (proposed %r)",
                        node.label, node.name, entity.label,
                    )
                return node.id, False, None
        node_id = mint_id("node")
        body = GraphNode(
            id=node_id,
            name=entity.name,
            label=entity.label,
            embedding=vector,
            created_at=event_time,
            namespace=namespace,
        ).to_body()
        return node_id, True, body

    def detect_conflicts(
        self,
        state: GraphState,
        namespace: str,
        source_id: str,
        relation: str,
        destination_id: str,
    ) -> list[GraphEdge]:
        """Valid edges from the same source that the candidate may supersede:
        same relation label with a different destination, or a relation
        whose embedding is close enough to count as the same relation."""
        relation_vec = self.embedder.embed([_relation_text(relation)])[0]
        conflicts = []
        for edge in state.edges.get(namespace, {}).values():
            if edge.invalid or edge.source != source_id:
                continue
            if edge.destination == destination_id:
                continue
            if edge.relation == relation:
                conflicts.append(edge)
            elif cosine(edge.relation_embedding, relation_vec) >= self.config.conflict_relation_threshold:
                conflicts.append(edge)
        return conflicts

    def resolve_updates(
        self, candidate: str, conflicts: Sequence[GraphEdge]
    ) -> list[str]:
        """Ask the backend which conflicting edges the candidate obsoletes."""
        if not conflicts:
            return []
        listing = "\n".join(f"{e.id} | {e.text}" for e in conflicts)
        prompt = self.templates.render("edge_resolver", candidate=candidate, conflicts=listing)
        response = self.chat.chat(
            ChatRequest(messages=[("user", prompt)], tool_schema=_RESOLVER_TOOLS)
        )
        try:
            if not response.tool_calls:
                raise ResolutionValidationError("resolver returned no tool call")
            chosen = [str(i) for i in response.tool_calls[0].arguments.get("edge_ids", [])]
            presented = {e.id for e in conflicts}
            unknown = [i for i in chosen if i not in presented]
            if unknown:
                raise ResolutionValidationError(
                    f"resolver named edges outside the presented conflicts: {unknown}"
                )
        except ResolutionValidationError as exc:
            logger.warning("%s; invalidating nothing", exc)
            return []
        return chosen

    # -- retrieval ---------------------------------------------------------------

    def entity_subgraph(self, state: GraphState, query: str, namespace: str) -> Subgraph:
        """Anchor nodes named in the query plus their valid 1-hop edges."""
        try:
            entities = self.extract_entities(query, context="")
        except ExtractionParseError:
            logger.warning("query entity extraction unparseable; empty subgraph")
            return Subgraph(nodes=[], edges=[])
        anchors: list[GraphNode] = []
        seen: set[str] = set()
        for entity in entities:
            vector = self.embedder.embed([entity.name])[0]
            nearest = state.nearest_node(namespace, vector)
            if nearest is None:
                continue
            node, score = nearest
            if score >= self.config.node_match_threshold and node.id not in seen:
                seen.add(node.id)
                anchors.append(node)
        nodes: list[GraphNode] = list(anchors)
        edges: list[GraphEdge] = []
        edge_ids: set[str] = set()
        budget = self.config.graph_node_budget
        for anchor in anchors:
            for edge in state.edges_touching(namespace, anchor.id):
                if edge.id in edge_ids:
                    continue
                other_id = edge.destination if edge.source == anchor.id else edge.source
                if other_id not in seen:
                    if len(nodes) >= budget:
                        continue
                    seen.add(other_id)
                    nodes.append(state.node(namespace, other_id))
                edge_ids.add(edge.id)
                edges.append(edge)
        return Subgraph(nodes=nodes[:budget], edges=edges)

    def semantic_triplets(
        self, state: GraphState, query: str, namespace: str, threshold: float
    ) -> list[tuple[GraphEdge, float]]:
        """All valid edges whose rendered-text embedding clears the
        threshold, in decreasing similarity order."""
        if not (-1.0 <= threshold <= 1.0):
            raise ValueError("threshold must lie in [-1, 1]")
        population = state.edge_index.size(namespace)
        if population == 0:
            return []
        vector = self.embedder.embed([query])[0]
        hits = state.edge_index.top_k(vector, population, namespace)
        out = []
        for hit in hits:
            if hit.score >= threshold:
                out.append((state.edges[namespace][hit.id], hit.score))
        return out


def _relation_text(relation: str) -> str:
    return relation.replace("_", " ")


def _parse_json_array(text: str) -> list:
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("["), text.rfind("]")
        if start == -1 or end <= start:
            raise ExtractionParseError(f"no JSON array in: {text[:200]!r}")
        try:
            value = json.loads(text[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ExtractionParseError(f"bad JSON array: {exc}") from exc
    if not isinstance(value, list):
        raise ExtractionParseError(f"expected a JSON array, got {type(value).__name__}")
    return value
