"""Event log and snapshot behavior: sequencing, integrity, recovery."""

from __future__ import annotations

import json

import pytest

from mnemos.errors import (
    ConfigMismatchError,
    IntegrityError,
    NotFoundError,
    UnsupportedSnapshotError,
)
from mnemos.store import EventLog, canonical_json, state_digest

NS = "memories/alice"


def test_first_event_gets_sequence_one(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    event = log.append(NS, "memory_add", {"id": "m1", "text": "x"})
    assert event.sequence == 1
    log.close()


def test_sequences_are_gapless_and_monotonic(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    for i in range(1, 11):
        assert log.append(NS, "memory_add", {"id": f"m{i}"}).sequence == i
    log.close()


def test_unknown_kind_rejected(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    with pytest.raises(IntegrityError):
        log.append(NS, "memory_smash", {})
    log.close()


def test_ten_thousand_events_reparse_exactly(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    for i in range(10_000):
        log.append(NS, "memory_add", {"id": f"m{i}"})
    log.close()
    reopened = EventLog(tmp_path, fsync=False)
    events = reopened.events(NS)
    assert len(events) == 10_000
    assert [e.sequence for e in events] == list(range(1, 10_001))
    reopened.close()


def test_gap_in_sequence_is_integrity_error(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m1"})
    log.append(NS, "memory_add", {"id": "m2"})
    log.close()
    events_file = next(tmp_path.rglob("events.jsonl"))
    lines = events_file.read_text().splitlines()
    tampered = json.loads(lines[1])
    tampered["sequence"] = 5
    events_file.write_text(lines[0] + "\n" + json.dumps(tampered) + "\n")
    with pytest.raises(IntegrityError):
        EventLog(tmp_path, fsync=False)


def test_unparseable_line_is_integrity_error(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m1"})
    log.close()
    events_file = next(tmp_path.rglob("events.jsonl"))
    events_file.write_text(events_file.read_text() + "not json at all\n")
    with pytest.raises(IntegrityError):
        EventLog(tmp_path, fsync=False)


def test_append_only_byte_prefix_preserved(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m1"})
    log.close()
    events_file = next(tmp_path.rglob("events.jsonl"))
    before = events_file.read_bytes()
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m2"})
    log.close()
    after = events_file.read_bytes()
    assert after.startswith(before)
    assert len(after) > len(before)


def test_in_memory_log_has_same_contract():
    log = EventLog(None)
    assert log.append(NS, "memory_add", {"id": "m1"}).sequence == 1
    assert log.append(NS, "memory_add", {"id": "m2"}).sequence == 2
    assert len(log.events(NS)) == 2
    with pytest.raises(IntegrityError):
        log.write_snapshot(NS, "fp", {})


# --------------------------------------------------------------------------
# snapshots


def test_snapshot_round_trip_empty(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m1"})
    log.write_snapshot(NS, "fp-1", {"records": {}})
    state, covered = log.load_snapshot(NS, "fp-1")
    assert covered == 1
    assert state == {"records": {}}
    log.close()


def test_snapshot_fingerprint_mismatch_is_hard_error(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m1"})
    log.write_snapshot(NS, "fp-1", {})
    with pytest.raises(ConfigMismatchError):
        log.load_snapshot(NS, "fp-other")
    log.close()


def test_snapshot_schema_version_mismatch(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m1"})
    path = log.write_snapshot(NS, "fp", {})
    raw = json.loads(path.read_text())
    raw["schema_version"] = 99
    path.write_text(json.dumps(raw))
    with pytest.raises(UnsupportedSnapshotError):
        log.load_snapshot(NS, "fp")
    log.close()


def test_events_after_snapshot_sequence(tmp_path):
    log = EventLog(tmp_path, fsync=False)
    log.append(NS, "memory_add", {"id": "m1"})
    log.write_snapshot(NS, "fp", {"n": 1})
    log.append(NS, "memory_add", {"id": "m2"})
    log.close()
    reopened = EventLog(tmp_path, fsync=False)
    _, covered = reopened.load_snapshot(NS, "fp")
    tail = reopened.events(NS, after=covered)
    assert [e.body["id"] for e in tail] == ["m2"]
    reopened.close()


# --------------------------------------------------------------------------
# history


def test_history_add_only():
    log = EventLog(None)
    log.append(NS, "memory_add", {"id": "m1", "text": "born"})
    lineage = log.history("m1")
    assert lineage == [("ADD", "born", lineage[0][2])]


def test_history_full_lineage():
    log = EventLog(None)
    log.append(NS, "memory_add", {"id": "m1", "text": "v1"})
    log.append(NS, "memory_update", {"id": "m1", "text": "v2"})
    log.append(NS, "memory_delete", {"id": "m1"})
    ops = [op for op, _, _ in log.history("m1")]
    texts = [text for _, text, _ in log.history("m1")]
    assert ops == ["ADD", "UPDATE", "DELETE"]
    assert texts == ["v1", "v2", None]


def test_history_matches_log_filter_oracle():
    log = EventLog(None)
    import random

    rng = random.Random(5)
    live = set()
    for i in range(200):
        if live and rng.random() < 0.3:
            target = rng.choice(sorted(live))
            if rng.random() < 0.5:
                log.append(NS, "memory_update", {"id": target, "text": f"u{i}"})
            else:
                log.append(NS, "memory_delete", {"id": target})
                live.discard(target)
        else:
            log.append(NS, "memory_add", {"id": f"m{i}", "text": f"t{i}"})
            live.add(f"m{i}")
    kinds = {"memory_add": "ADD", "memory_update": "UPDATE", "memory_delete": "DELETE"}
    for memory_id in [f"m{i}" for i in range(0, 200, 17)]:
        expected = [
            (kinds[e.kind], e.body.get("text"), e.instant)
            for e in log.events(NS)
            if e.body.get("id") == memory_id and e.kind in kinds
        ]
        if expected:
            assert log.history(memory_id) == expected


def test_history_unknown_id():
    log = EventLog(None)
    with pytest.raises(NotFoundError):
        log.history("ghost")


# --------------------------------------------------------------------------
# canonical serialization


def test_canonical_json_is_key_sorted_and_compact():
    assert canonical_json({"b": 1, "a": [1.5, "x"]}) == '{"a":[1.5,"x"],"b":1}'


def test_state_digest_stable_for_equal_values():
    a = {"x": [1.0, 2.0], "y": {"k": "v"}}
    b = {"y": {"k": "v"}, "x": [1.0, 2.0]}
    assert state_digest(a) == state_digest(b)
    assert state_digest(a) != state_digest({"x": [1.0, 2.0001], "y": {"k": "v"}})
