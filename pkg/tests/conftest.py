"""Shared fixtures: scripted-provider builders and engine factories."""

from __future__ import annotations

import json

import pytest

from mnemos import (
    ChatResponse,
    EngineConfig,
    MemoryEngine,
    Message,
    ScriptedChatProvider,
    ToolCall,
)


def extraction_entry(script: ScriptedChatProvider, marker: str, facts: list) -> None:
    """Scripted extractor: request containing ``marker`` yields ``facts``."""
    script.add(ChatResponse(text=json.dumps(facts)), substring=marker)


def decision_entry(
    script: ScriptedChatProvider, fact_text: str, op: str, **arguments
) -> None:
    """Scripted updater keyed on the candidate-fact line of the prompt."""
    script.add(
        ChatResponse(tool_calls=[ToolCall(name=op, arguments=arguments)]),
        substring=f"Candidate fact:\n{fact_text}\n",
    )


def entities_entry(script: ScriptedChatProvider, marker: str, entities: list) -> None:
    script.add(
        ChatResponse(text=json.dumps(entities)),
        regex=r"Identify the entities[\s\S]*" + marker,
    )


def relations_entry(script: ScriptedChatProvider, marker: str, triplets: list) -> None:
    script.add(
        ChatResponse(text=json.dumps(triplets)),
        regex=r"Connect the entities[\s\S]*" + marker,
    )


def resolver_entry(script: ScriptedChatProvider, marker: str, edge_ids: list) -> None:
    script.add(
        ChatResponse(
            tool_calls=[ToolCall(name="invalidate_edges", arguments={"edge_ids": edge_ids})]
        ),
        regex=r"new relationship is being added[\s\S]*" + marker,
    )


@pytest.fixture
def lenient_script() -> ScriptedChatProvider:
    return ScriptedChatProvider(strict=False, default_response=ChatResponse(text="[]"))


def make_engine(
    script: ScriptedChatProvider,
    data_dir=None,
    **config_overrides,
) -> MemoryEngine:
    defaults = dict(
        embedding_dim=64,
        deterministic_ids=True,
        summary_refresh_every=0,
        fsync_events=False,
    )
    defaults.update(config_overrides)
    return MemoryEngine(
        config=EngineConfig(**defaults), chat=script, data_dir=data_dir
    )


def msg(speaker: str, text: str, ts: str = "2023-05-08T13:56:00+00:00") -> Message:
    return Message(speaker=speaker, text=text, timestamp=ts)


@pytest.fixture
def vegetarian_pair() -> tuple[Message, Message]:
    return (
        msg("alice", "I am vegetarian and I avoid dairy."),
        msg("assistant", "Got it, noted!", "2023-05-08T13:56:30+00:00"),
    )
