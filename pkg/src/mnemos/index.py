"""In-memory dense vector index with exact, deterministic retrieval.

Search is an exhaustive cosine scan over the namespace (delegated to the
selected kernel backend), never approximate: per-conversation memory
stores are small, and golden tests need byte-stable orderings. Results
are fully ordered by (score desc, insertion order asc, id asc).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

from . import kernels
from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class IndexEntry:
    id: str
    vector: np.ndarray
    namespace: str
    payload: Any = None
    seq: int = 0  # insertion order within the namespace, assigned by the index


@dataclass(frozen=True)
class ScoredHit:
    id: str
    score: float
    payload: Any = None


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with input validation, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise InvalidInputError("cosine is undefined for zero vectors")
    value = float(np.dot(a, b)) / (na * nb)
    return max(-1.0, min(1.0, value))


class _NamespaceData:
    __slots__ = ("entries", "next_seq", "cache")

    def __init__(self) -> None:
        self.entries: dict[str, IndexEntry] = {}
        self.next_seq = 0
        # cache: (ids, matrix, norms) aligned by row, rows in seq order
        self.cache: tuple[list[str], np.ndarray, np.ndarray] | None = None


class VectorIndex:
    """Namespace-partitioned exact index.

    Writes are serialized per index; reads take a snapshot of the
    namespace's scan cache at entry, so a concurrent write is seen
    either entirely or not at all.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise InvalidInputError("dimension must be positive")
        self.dimension = dimension
        self._namespaces: dict[str, _NamespaceData] = {}
        self._lock = threading.RLock()

    # -- mutation ----------------------------------------------------------

    def upsert(self, entry: IndexEntry) -> None:
        vector = self._check_vector(entry.vector)
        with self._lock:
            ns = self._namespaces.setdefault(entry.namespace, _NamespaceData())
            previous = ns.entries.get(entry.id)
            # replacing a vector keeps the original insertion rank
            seq = previous.seq if previous is not None else ns.next_seq
            if previous is None:
                ns.next_seq += 1
            ns.entries[entry.id] = IndexEntry(
                id=entry.id,
                vector=vector,
                namespace=entry.namespace,
                payload=entry.payload,
                seq=seq,
            )
            ns.cache = None

    def remove(self, id: str, namespace: str) -> bool:
        with self._lock:
            ns = self._namespaces.get(namespace)
            if ns is None or id not in ns.entries:
                return False
            del ns.entries[id]
            ns.cache = None
            return True

    # -- queries -----------------------------------------------------------

    def top_k(self, query: np.ndarray, k: int, namespace: str) -> list[ScoredHit]:
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        query = self._check_vector(query)
        query_norm = float(np.linalg.norm(query))
        if query_norm == 0.0:
            raise InvalidInputError("cannot search with a zero vector")
        snapshot = self._scan_snapshot(namespace)
        if snapshot is None:
            return []
        ids, matrix, norms, entries = snapshot
        # rows are in insertion order and ids are unique, so the kernel's
        # (score desc, earlier row first) ordering is already total
        order, scores = kernels.top_k_indices(matrix, norms, query, query_norm, k)
        return [
            ScoredHit(
                id=ids[row], score=float(scores[j]), payload=entries[ids[row]].payload
            )
            for j, row in enumerate(order)
        ]

    def size(self, namespace: str) -> int:
        with self._lock:
            ns = self._namespaces.get(namespace)
            return len(ns.entries) if ns else 0

    def ids(self, namespace: str) -> set[str]:
        with self._lock:
            ns = self._namespaces.get(namespace)
            return set(ns.entries) if ns else set()

    def contains(self, id: str, namespace: str) -> bool:
        with self._lock:
            ns = self._namespaces.get(namespace)
            return bool(ns and id in ns.entries)

    # -- copying (transaction scratch) --------------------------------------

    def clone_namespaces(self, namespaces: Iterable[str]) -> "VectorIndex":
        """Shallow copy of the given namespaces; entries are immutable."""
        clone = VectorIndex(self.dimension)
        with self._lock:
            for name in namespaces:
                ns = self._namespaces.get(name)
                if ns is None:
                    continue
                copied = _NamespaceData()
                copied.entries = dict(ns.entries)
                copied.next_seq = ns.next_seq
                clone._namespaces[name] = copied
        return clone

    def adopt_namespace(self, namespace: str, source: "VectorIndex") -> None:
        """Replace one namespace with the version from ``source``."""
        with self._lock:
            src = source._namespaces.get(namespace)
            if src is None:
                self._namespaces.pop(namespace, None)
                return
            replacement = _NamespaceData()
            replacement.entries = dict(src.entries)
            replacement.next_seq = src.next_seq
            self._namespaces[namespace] = replacement

    # -- internals -----------------------------------------------------------

    def _check_vector(self, vector: np.ndarray) -> np.ndarray:
        arr = np.ascontiguousarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.dimension:
            raise InvalidInputError(
                f"vector has dimension {arr.shape}, index expects {self.dimension}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("vector has non-finite values")
        return arr

    def _scan_snapshot(self, namespace: str):
        with self._lock:
            ns = self._namespaces.get(namespace)
            if ns is None or not ns.entries:
                return None
            if ns.cache is None:
                ordered = sorted(ns.entries.values(), key=lambda e: e.seq)
                ids = [e.id for e in ordered]
                matrix = np.ascontiguousarray(
                    np.stack([e.vector for e in ordered]), dtype=np.float64
                )
                norms = np.linalg.norm(matrix, axis=1)
                if np.any(norms == 0.0):
                    raise InvalidInputError("index contains a zero vector")
                ns.cache = (ids, matrix, norms)
            ids, matrix, norms = ns.cache
            entries = ns.entries
        return ids, matrix, norms, entries

    def entries_in(self, namespace: str) -> list[IndexEntry]:
        """Entries of one namespace in insertion order (stable copies)."""
        with self._lock:
            ns = self._namespaces.get(namespace)
            if ns is None:
                return []
            return sorted(ns.entries.values(), key=lambda e: e.seq)
