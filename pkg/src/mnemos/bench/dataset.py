"""Benchmark dataset loading and validation.

A dataset is one JSON document: two-speaker conversations split into
timestamped sessions, each followed by QA items in one of the four
evaluated categories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DatasetError
from ..pipeline import Message

CATEGORIES = ("single_hop", "multi_hop", "temporal", "open_domain")


@dataclass(frozen=True)
class QaItem:
    question: str
    gold_answer: str
    category: str


@dataclass
class Conversation:
    id: str
    speakers: tuple[str, str]
    sessions: list[list[Message]]
    qa: list[QaItem] = field(default_factory=list)


@dataclass
class ConversationDataset:
    conversations: list[Conversation]

    @property
    def question_count(self) -> int:
        return sum(len(c.qa) for c in self.conversations)


def load_dataset(path: str | Path) -> ConversationDataset:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_dataset(raw)


def parse_dataset(raw: dict) -> ConversationDataset:
    if not isinstance(raw, dict) or not isinstance(raw.get("conversations"), list):
        raise DatasetError("dataset root must be {'conversations': [...]}")
    conversations = []
    for ci, conv in enumerate(raw["conversations"]):
        where = f"conversations[{ci}]"
        if not isinstance(conv, dict):
            raise DatasetError(f"{where}: expected an object")
        conv_id = conv.get("id")
        if not conv_id:
            raise DatasetError(f"{where}.id: missing")
        speakers = conv.get("speakers")
        if not isinstance(speakers, list) or len(speakers) != 2:
            raise DatasetError(f"{where}.speakers: exactly two speakers required")
        sessions = []
        for si, session in enumerate(conv.get("sessions", [])):
            if not isinstance(session, list):
                raise DatasetError(f"{where}.sessions[{si}]: expected a message list")
            messages = []
            for mi, msg in enumerate(session):
                spot = f"{where}.sessions[{si}][{mi}]"
                try:
                    message = Message(
                        speaker=msg["speaker"],
                        text=msg["text"],
                        timestamp=msg["timestamp"],
                    )
                except (KeyError, TypeError) as exc:
                    raise DatasetError(f"{spot}: missing field {exc}") from exc
                except Exception as exc:
                    raise DatasetError(f"{spot}: {exc}") from exc
                if message.speaker not in speakers:
                    raise DatasetError(
                        f"{spot}: speaker {message.speaker!r} not in {speakers}"
                    )
                messages.append(message)
            sessions.append(messages)
        qa_items = []
        for qi, qa in enumerate(conv.get("qa", [])):
            spot = f"{where}.qa[{qi}]"
            if not isinstance(qa, dict):
                raise DatasetError(f"{spot}: expected an object")
            category = qa.get("category")
            if category not in CATEGORIES:
                raise DatasetError(
                    f"{spot}.category: {category!r} is not one of {CATEGORIES}"
                )
            if not qa.get("question") or "gold_answer" not in qa:
                raise DatasetError(f"{spot}: needs question and gold_answer")
            qa_items.append(
                QaItem(
                    question=qa["question"],
                    gold_answer=str(qa["gold_answer"]),
                    category=category,
                )
            )
        conversations.append(
            Conversation(
                id=str(conv_id),
                speakers=(speakers[0], speakers[1]),
                sessions=sessions,
                qa=qa_items,
            )
        )
    return ConversationDataset(conversations=conversations)
