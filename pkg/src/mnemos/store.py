"""Durability: append-only event logs plus point-in-time snapshots.

Every mutation of engine state is an event. Logs are line-delimited
JSON, one file per namespace, with a gapless sequence per file; replay
of (latest snapshot + newer events) reconstructs state exactly. Events
are written (and fsynced by default) before the owning operation is
acknowledged.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterator
from urllib.parse import quote, unquote

from .errors import (
    ConfigMismatchError,
    IntegrityError,
    NotFoundError,
    UnsupportedSnapshotError,
)

SCHEMA_VERSION = 1

EVENT_KINDS = frozenset(
    {
        "memory_add",
        "memory_update",
        "memory_delete",
        "node_add",
        "edge_add",
        "edge_invalidate",
        "summary_set",
        "message_append",
    }
)


def canonical_json(value: Any) -> str:
    """Fixed-order, compact serialization used for digests and events."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def state_digest(value: Any) -> str:
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class EventRecord:
    namespace: str
    sequence: int
    instant: str
    kind: str
    body: dict

    def to_line(self) -> str:
        return canonical_json(
            {
                "sequence": self.sequence,
                "instant": self.instant,
                "kind": self.kind,
                "body": self.body,
            }
        )


def _parse_event_line(namespace: str, line: str, lineno: int) -> EventRecord:
    try:
        raw = json.loads(line)
        return EventRecord(
            namespace=namespace,
            sequence=raw["sequence"],
            instant=raw["instant"],
            kind=raw["kind"],
            body=raw["body"],
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{namespace} line {lineno}: unreadable event: {exc}") from exc


class _NamespaceLog:
    __slots__ = ("seq", "events", "fh")

    def __init__(self) -> None:
        self.seq = 0
        self.events: list[EventRecord] = []
        self.fh = None


class EventLog:
    """Per-namespace append-only logs under one data directory.

    With ``data_dir=None`` the log lives purely in memory (ephemeral
    engines, unit tests); the sequencing and replay contracts are
    identical.
    """

    def __init__(self, data_dir: str | Path | None, fsync: bool = True):
        self._dir = Path(data_dir) if data_dir is not None else None
        self._fsync = fsync
        self._logs: dict[str, _NamespaceLog] = {}
        self._lock = threading.RLock()
        # test hook: called after each durable append
        self.after_append: Callable[[EventRecord], None] | None = None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            self._load_existing()

    # -- write path ----------------------------------------------------------

    def append(self, namespace: str, kind: str, body: dict) -> EventRecord:
        if kind not in EVENT_KINDS:
            raise IntegrityError(f"unknown event kind: {kind!r}")
        with self._lock:
            log = self._logs.setdefault(namespace, _NamespaceLog())
            event = EventRecord(
                namespace=namespace,
                sequence=log.seq + 1,
                instant=utc_now_iso(),
                kind=kind,
                body=body,
            )
            self._write(namespace, log, event)
            log.seq = event.sequence
            log.events.append(event)
        if self.after_append is not None:
            self.after_append(event)
        return event

    def _write(self, namespace: str, log: _NamespaceLog, event: EventRecord) -> None:
        if self._dir is None:
            return
        if log.fh is None:
            path = self._events_path(namespace)
            path.parent.mkdir(parents=True, exist_ok=True)
            log.fh = open(path, "a", encoding="utf-8")
        log.fh.write(event.to_line() + "\n")
        log.fh.flush()
        if self._fsync:
            os.fsync(log.fh.fileno())

    # -- read path -----------------------------------------------------------

    def namespaces(self) -> list[str]:
        with self._lock:
            return sorted(self._logs)

    def events(self, namespace: str, after: int = 0) -> list[EventRecord]:
        with self._lock:
            log = self._logs.get(namespace)
            if log is None:
                return []
            return [e for e in log.events if e.sequence > after]

    def last_sequence(self, namespace: str) -> int:
        with self._lock:
            log = self._logs.get(namespace)
            return log.seq if log else 0

    def iter_all(self) -> Iterator[EventRecord]:
        for namespace in self.namespaces():
            yield from self.events(namespace)

    # -- snapshots -----------------------------------------------------------

    def write_snapshot(self, namespace: str, fingerprint: str, state: dict) -> Path:
        if self._dir is None:
            raise IntegrityError("snapshots need a data directory")
        with self._lock:
            seq = self.last_sequence(namespace)
            snap = {
                "schema_version": SCHEMA_VERSION,
                "config_fingerprint": fingerprint,
                "covering_sequence": seq,
                "state": state,
            }
            path = self._snapshot_dir(namespace) / f"{seq:012d}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(canonical_json(snap), encoding="utf-8")
            os.replace(tmp, path)
            return path

    def load_snapshot(self, namespace: str, fingerprint: str) -> tuple[dict | None, int]:
        """Latest snapshot state (or None) and its covering sequence."""
        if self._dir is None:
            return None, 0
        snap_dir = self._snapshot_dir(namespace)
        if not snap_dir.is_dir():
            return None, 0
        candidates = sorted(snap_dir.glob("*.json"))
        if not candidates:
            return None, 0
        raw = json.loads(candidates[-1].read_text(encoding="utf-8"))
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise UnsupportedSnapshotError(
                f"snapshot schema {raw.get('schema_version')} is not {SCHEMA_VERSION}"
            )
        if raw.get("config_fingerprint") != fingerprint:
            raise ConfigMismatchError(
                f"snapshot for {namespace!r} was written under config "
                f"{raw.get('config_fingerprint')}, runtime is {fingerprint}"
            )
        return raw["state"], raw["covering_sequence"]

    # -- lineage -------------------------------------------------------------

    def history(self, memory_id: str) -> list[tuple[str, str | None, str]]:
        """Full (operation, text, instant) lineage of one memory id."""
        kinds = {"memory_add": "ADD", "memory_update": "UPDATE", "memory_delete": "DELETE"}
        lineage = []
        for event in self.iter_all():
            op = kinds.get(event.kind)
            if op and event.body.get("id") == memory_id:
                lineage.append((op, event.body.get("text"), event.instant))
        if not lineage:
            raise NotFoundError(f"no events for memory id {memory_id!r}")
        return lineage

    # -- startup -------------------------------------------------------------

    def _load_existing(self) -> None:
        assert self._dir is not None
        for events_path in sorted(self._dir.rglob("events.jsonl")):
            rel = events_path.parent.relative_to(self._dir)
            namespace = "/".join(_unquote_part(p) for p in rel.parts)
            log = _NamespaceLog()
            with open(events_path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    event = _parse_event_line(namespace, line, lineno)
                    if event.sequence != log.seq + 1:
                        raise IntegrityError(
                            f"{namespace}: sequence {event.sequence} after {log.seq}"
                        )
                    if event.kind not in EVENT_KINDS:
                        raise IntegrityError(f"{namespace}: unknown kind {event.kind!r}")
                    log.events.append(event)
                    log.seq = event.sequence
            self._logs[namespace] = log

    # -- paths ---------------------------------------------------------------

    def _namespace_dir(self, namespace: str) -> Path:
        assert self._dir is not None
        parts = [_quote_part(p) for p in namespace.split("/")]
        return self._dir.joinpath(*parts)

    def _events_path(self, namespace: str) -> Path:
        return self._namespace_dir(namespace) / "events.jsonl"

    def _snapshot_dir(self, namespace: str) -> Path:
        return self._namespace_dir(namespace) / "snapshots"

    def close(self) -> None:
        with self._lock:
            for log in self._logs.values():
                if log.fh is not None:
                    log.fh.close()
                    log.fh = None


def _quote_part(part: str) -> str:
    return quote(part, safe="._-")


def _unquote_part(part: str) -> str:
    return unquote(part)
