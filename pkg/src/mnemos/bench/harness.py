"""Replay conversations through an engine, answer questions from its
memories, and grade the answers."""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..errors import JudgeParseError, ProviderError
from ..pipeline import MemoryEngine
from ..providers import ChatProvider, ChatRequest
from ..templating import TemplateSet
from .dataset import Conversation, ConversationDataset
from .scoring import score_bleu1, score_f1
from .tokens import count_tokens

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Ingestion replay


@dataclass
class ConversationIngest:
    conversation_id: str
    pairs: int
    memories_per_namespace: dict[str, int]
    graph_nodes: int
    graph_edges: int
    seconds: float


@dataclass
class IngestReport:
    conversations: list[ConversationIngest] = field(default_factory=list)
    total_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "total_seconds": self.total_seconds,
            "conversations": [
                {
                    "conversation_id": c.conversation_id,
                    "pairs": c.pairs,
                    "memories_per_namespace": c.memories_per_namespace,
                    "graph_nodes": c.graph_nodes,
                    "graph_edges": c.graph_edges,
                    "seconds": c.seconds,
                }
                for c in self.conversations
            ],
        }


def replay_ingest(
    dataset: ConversationDataset,
    engine: MemoryEngine,
    session_reset: bool = True,
) -> IngestReport:
    """Feed every session's messages through the engine pairwise, in
    timestamp order. With ``session_reset`` the recent window is fenced
    at each session boundary."""
    report = IngestReport()
    started = time.perf_counter()
    for conv in dataset.conversations:
        conv_started = time.perf_counter()
        pairs = 0
        for session in conv.sessions:
            if session_reset:
                engine.start_session(conv.id)
            ordered = sorted(session, key=lambda m: m.instant)
            engine.submit_messages(conv.id, ordered)
            pairs += len(ordered) // 2
        namespaces = (
            [conv.id]
            if engine.config.namespace_mode == "per_conversation"
            else list(conv.speakers)
        )
        memories = {ns: len(engine.get_all(ns)) for ns in namespaces}
        nodes = sum(len(engine.state.graph.nodes.get(ns, {})) for ns in namespaces)
        edges = sum(len(engine.state.graph.edges.get(ns, {})) for ns in namespaces)
        report.conversations.append(
            ConversationIngest(
                conversation_id=conv.id,
                pairs=pairs,
                memories_per_namespace=memories,
                graph_nodes=nodes,
                graph_edges=edges,
                seconds=time.perf_counter() - conv_started,
            )
        )
    report.total_seconds = time.perf_counter() - started
    return report


# --------------------------------------------------------------------------
# Answer generation


@dataclass
class QuestionResult:
    conversation_id: str
    question: str
    category: str
    gold_answer: str
    generated: str | None
    failed: bool
    search_seconds: float
    total_seconds: float
    context_tokens: int
    context: str
    f1: float = 0.0
    bleu1: float = 0.0
    judge_labels: list[str] = field(default_factory=list)  # per repeat: CORRECT/WRONG/ERROR

    def to_dict(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "question": self.question,
            "category": self.category,
            "gold_answer": self.gold_answer,
            "generated": self.generated,
            "failed": self.failed,
            "search_seconds": self.search_seconds,
            "total_seconds": self.total_seconds,
            "context_tokens": self.context_tokens,
            "f1": self.f1,
            "bleu1": self.bleu1,
            "judge_labels": self.judge_labels,
        }


def _memory_lines(engine: MemoryEngine, namespace: str, query: str, k: int) -> list[str]:
    hits = engine.search(query, k, namespace)
    return [f"- {hit.payload.text}" for hit in hits if hit.payload is not None]


def _relation_lines(engine: MemoryEngine, namespace: str, query: str, k: int) -> list[str]:
    ranked = engine.retrieve_semantic_triplets(query, namespace)
    return [f"- {edge.text}" for edge, _ in ranked[:k]]


def answer_question(
    engine: MemoryEngine,
    conversation: Conversation,
    question: str,
    k: int,
    mode: str,
    answerer: ChatProvider,
) -> tuple[str | None, dict]:
    """Retrieve per-speaker context, render the answer prompt, generate.

    Returns (answer or None on provider failure, measurements)."""
    speaker_1, speaker_2 = conversation.speakers
    ns_1, ns_2 = _question_namespaces(engine, conversation)

    search_started = time.perf_counter()
    memories_1 = _memory_lines(engine, ns_1, question, k)
    memories_2 = _memory_lines(engine, ns_2, question, k)
    values = {
        "speaker_1_user_id": speaker_1,
        "speaker_2_user_id": speaker_2,
        "speaker_1_memories": "\n".join(memories_1) or "(none)",
        "speaker_2_memories": "\n".join(memories_2) or "(none)",
        "question": question,
    }
    context_sections = memories_1 + memories_2
    if mode == "graph":
        relations_1 = _relation_lines(engine, ns_1, question, k)
        relations_2 = _relation_lines(engine, ns_2, question, k)
        values["speaker_1_graph_memories"] = "\n".join(relations_1) or "(none)"
        values["speaker_2_graph_memories"] = "\n".join(relations_2) or "(none)"
        context_sections += relations_1 + relations_2
    search_seconds = time.perf_counter() - search_started

    template = "answer_graph" if mode == "graph" else "answer_dense"
    prompt = engine.templates.render(template, **values)
    context = "\n".join(context_sections)

    answer: str | None = None
    try:
        response = answerer.chat(ChatRequest(messages=[("user", prompt)]))
        answer = (response.text or "").strip()
    except ProviderError as exc:
        logger.warning("answer generation failed: %s", exc)
    total_seconds = time.perf_counter() - search_started

    measurements = {
        "search_seconds": search_seconds,
        "total_seconds": total_seconds,
        "context": context,
        "prompt": prompt,
    }
    return answer, measurements


def _question_namespaces(engine: MemoryEngine, conversation: Conversation) -> tuple[str, str]:
    if engine.config.namespace_mode == "per_conversation":
        return conversation.id, conversation.id
    return conversation.speakers


def answer_question_rag(
    rag,
    templates: TemplateSet,
    conversation: Conversation,
    question: str,
    k: int,
    answerer: ChatProvider,
) -> tuple[str | None, dict]:
    """Comparison-stub path: whole retrieved chunks as context."""
    search_started = time.perf_counter()
    chunks = rag.search(question, k, conversation.id)
    search_seconds = time.perf_counter() - search_started
    context = "\n".join(chunks)
    prompt = templates.render(
        "answer_dense",
        speaker_1_user_id=conversation.speakers[0],
        speaker_2_user_id=conversation.speakers[1],
        speaker_1_memories=context or "(none)",
        speaker_2_memories="(none)",
        question=question,
    )
    answer: str | None = None
    try:
        response = answerer.chat(ChatRequest(messages=[("user", prompt)]))
        answer = (response.text or "").strip()
    except ProviderError as exc:
        logger.warning("answer generation failed: %s", exc)
    return answer, {
        "search_seconds": search_seconds,
        "total_seconds": time.perf_counter() - search_started,
        "context": context,
        "prompt": prompt,
    }


# --------------------------------------------------------------------------
# Judge


@dataclass(frozen=True)
class JudgeVerdict:
    label: str  # CORRECT | WRONG
    rationale: str = ""


_JSON_OBJECT_RE = re.compile(r"\{[^{}]*\}")


def judge(
    provider: ChatProvider,
    templates: TemplateSet,
    question: str,
    gold_answer: str,
    generated_answer: str,
) -> JudgeVerdict:
    """Render the judge prompt, call the provider, parse {"label": ...}."""
    prompt = render_judge_prompt(templates, question, gold_answer, generated_answer)
    response = provider.chat(ChatRequest(messages=[("user", prompt)]))
    text = response.text or ""
    label = _parse_judge_label(text)
    return JudgeVerdict(label=label, rationale=text)


def render_judge_prompt(
    templates: TemplateSet, question: str, gold_answer: str, generated_answer: str
) -> str:
    return templates.render(
        "judge",
        question=question,
        gold_answer=gold_answer,
        generated_answer=generated_answer,
    )


def _parse_judge_label(text: str) -> str:
    candidates = []
    try:
        candidates.append(json.loads(text))
    except json.JSONDecodeError:
        candidates.extend(_try_load(m) for m in _JSON_OBJECT_RE.findall(text))
    for value in candidates:
        if isinstance(value, dict) and "label" in value:
            label = str(value["label"]).strip().upper()
            if label in ("CORRECT", "WRONG"):
                return label
            raise JudgeParseError(f"label must be CORRECT or WRONG, got {value['label']!r}")
    raise JudgeParseError(f"no JSON label object in judge output: {text[:200]!r}")


def _try_load(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return None


# --------------------------------------------------------------------------
# Full run


def run_questions(
    dataset: ConversationDataset,
    engine: MemoryEngine,
    answerer: ChatProvider,
    judge_provider: ChatProvider | None,
    k: int,
    mode: str,
    repeats: int = 1,
    workers: int = 1,
    vary_answers: bool = False,
    tokenizer: str = "whitespace",
) -> list[QuestionResult]:
    """Answer and grade every question; the judge runs ``repeats`` times.

    With ``vary_answers`` the answer is regenerated per repeat as well
    (the default varies only the judge)."""
    tasks = [
        (conv, qa) for conv in dataset.conversations for qa in conv.qa
    ]

    def evaluate(task) -> QuestionResult:
        conv, qa = task
        answer, meas = answer_question(engine, conv, qa.question, k, mode, answerer)
        result = QuestionResult(
            conversation_id=conv.id,
            question=qa.question,
            category=qa.category,
            gold_answer=qa.gold_answer,
            generated=answer,
            failed=answer is None,
            search_seconds=meas["search_seconds"],
            total_seconds=meas["total_seconds"],
            context_tokens=count_tokens(meas["context"], tokenizer),
            context=meas["context"],
        )
        if answer is not None:
            result.f1 = score_f1(qa.gold_answer, answer)
            result.bleu1 = score_bleu1(qa.gold_answer, answer)
        if judge_provider is not None:
            for run_index in range(repeats):
                generated = answer
                if vary_answers and run_index > 0:
                    generated, _ = answer_question(
                        engine, conv, qa.question, k, mode, answerer
                    )
                if generated is None:
                    result.judge_labels.append("ERROR")
                    continue
                try:
                    verdict = judge(
                        judge_provider, engine.templates, qa.question,
                        qa.gold_answer, generated,
                    )
                    result.judge_labels.append(verdict.label)
                except (JudgeParseError, ProviderError) as exc:
                    logger.warning("judge failed: %s", exc)
                    result.judge_labels.append("ERROR")
        return result

    if workers <= 1:
        return [evaluate(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(evaluate, tasks))
