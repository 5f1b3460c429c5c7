"""Benchmark command line.

Verbs:
  ingest   replay a dataset into an engine store and report construction stats
  run      ingest + answer + grade, writing run.json / report.json / report.txt
  report   rebuild the report from an existing run directory
  kernels  time the compiled scan kernel against the NumPy fallback
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .. import kernels
from ..config import EngineConfig
from ..pipeline import MemoryEngine
from ..providers import ChatResponse, HashEmbedder, RemoteChatProvider, ScriptedChatProvider
from ..templating import TemplateSet
from .dataset import load_dataset
from .harness import answer_question_rag, replay_ingest, run_questions
from .rag import ChunkedRag
from .report import render_table, write_report
from .scoring import score_bleu1, score_f1
from .stats import percentile
from .tokens import count_tokens, register_bpe_vocabulary

logger = logging.getLogger(__name__)


def _build_provider(args, role: str):
    """Provider for one of the roles (engine, answerer, judge)."""
    if getattr(args, "remote_url", None):
        return RemoteChatProvider(args.remote_url, args.model)
    if args.script:
        return ScriptedChatProvider.from_file(args.script, strict=args.strict_script)
    # no script: everything falls through to "no facts / no answer"
    return ScriptedChatProvider(strict=False, default_response=ChatResponse(text="[]"))


def _build_engine(args, mode: str) -> MemoryEngine:
    config = EngineConfig(
        graph_enabled=(mode == "graph"),
        deterministic_ids=args.seeded_ids,
        timestamp_facts=True,
        summary_refresh_every=args.summary_every,
        namespace_mode=args.namespace_mode,
    )
    return MemoryEngine(
        config=config,
        chat=_build_provider(args, "engine"),
        data_dir=args.data_dir,
    )


def _cmd_ingest(args) -> int:
    dataset = load_dataset(args.dataset)
    engine = _build_engine(args, args.mode)
    report = replay_ingest(dataset, engine, session_reset=not args.no_session_reset)
    engine.close()
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_run(args) -> int:
    dataset = load_dataset(args.dataset)
    if args.vocabulary:
        register_bpe_vocabulary(args.tokenizer, args.vocabulary)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    judge_provider = None
    if args.judge != "none":
        judge_provider = _build_provider(args, "judge")

    if args.mode == "rag":
        results = _run_rag(args, dataset, judge_provider)
        ingest_report = {}
    else:
        engine = _build_engine(args, args.mode)
        ingest_report = replay_ingest(
            dataset, engine, session_reset=not args.no_session_reset
        ).to_dict()
        answerer = _build_provider(args, "answerer")
        results = run_questions(
            dataset,
            engine,
            answerer,
            judge_provider,
            k=args.k,
            mode=args.mode,
            repeats=args.repeats,
            workers=args.workers,
            vary_answers=args.vary_answers,
            tokenizer=args.tokenizer,
        )
        if args.snapshot:
            engine.write_snapshots()
        engine.close()

    run_payload = {
        "dataset": str(args.dataset),
        "mode": args.mode,
        "k": args.k,
        "repeats": args.repeats,
        "tokenizer_id": args.tokenizer,
        "ingest": ingest_report,
        "results": [r.to_dict() for r in results],
    }
    (out_dir / "run.json").write_text(
        json.dumps(run_payload, indent=2, sort_keys=True), encoding="utf-8"
    )
    report = write_report(out_dir, run_payload)
    print(render_table(report))
    return 0


def _run_rag(args, dataset, judge_provider):
    from .harness import QuestionResult, judge as judge_answer

    embedder = HashEmbedder()
    rag = ChunkedRag(embedder, chunk_tokens=args.chunk_tokens)
    for conv in dataset.conversations:
        rag.add_conversation(conv)
    answerer = _build_provider(args, "answerer")
    templates = TemplateSet()
    results = []
    for conv in dataset.conversations:
        for qa in conv.qa:
            answer, meas = answer_question_rag(
                rag, templates, conv, qa.question, args.k, answerer
            )
            result = QuestionResult(
                conversation_id=conv.id,
                question=qa.question,
                category=qa.category,
                gold_answer=qa.gold_answer,
                generated=answer,
                failed=answer is None,
                search_seconds=meas["search_seconds"],
                total_seconds=meas["total_seconds"],
                context_tokens=count_tokens(meas["context"], args.tokenizer),
                context=meas["context"],
            )
            if answer is not None:
                result.f1 = score_f1(qa.gold_answer, answer)
                result.bleu1 = score_bleu1(qa.gold_answer, answer)
            if judge_provider is not None:
                for _ in range(args.repeats):
                    try:
                        verdict = judge_answer(
                            judge_provider, templates, qa.question,
                            qa.gold_answer, answer or "",
                        )
                        result.judge_labels.append(verdict.label)
                    except Exception:
                        result.judge_labels.append("ERROR")
            results.append(result)
    return results


def _cmd_report(args) -> int:
    run_path = Path(args.run_dir) / "run.json"
    if not run_path.is_file():
        print(f"no run.json under {args.run_dir}", file=sys.stderr)
        return 2
    run_payload = json.loads(run_path.read_text(encoding="utf-8"))
    report = write_report(args.run_dir, run_payload)
    print(render_table(report))
    return 0


def _cmd_kernels(args) -> int:
    rng = np.random.default_rng(args.seed)
    matrix = rng.normal(size=(args.count, args.dim))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    matrix = np.ascontiguousarray(matrix)
    norms = np.linalg.norm(matrix, axis=1)
    queries = rng.normal(size=(args.queries, args.dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    queries = np.ascontiguousarray(queries)

    backends = kernels.available_backends()
    print(
        f"top-{args.k} scan of {args.count} x {args.dim} vectors, "
        f"{args.queries} queries\n"
    )
    print("{:<10} {:>12} {:>12} {:>14}".format("backend", "p50 ms", "p95 ms", "queries/sec"))
    timings: dict[str, list[float]] = {}
    for name, backend in sorted(backends.items()):
        backend.top_k_indices(matrix, norms, queries[0], 1.0, args.k)  # warm-up
        samples = []
        for i in range(args.queries):
            started = time.perf_counter()
            backend.top_k_indices(matrix, norms, queries[i], 1.0, args.k)
            samples.append(time.perf_counter() - started)
        timings[name] = samples
        print(
            "{:<10} {:>12.3f} {:>12.3f} {:>14.0f}".format(
                name,
                percentile(samples, 50) * 1e3,
                percentile(samples, 95) * 1e3,
                len(samples) / sum(samples),
            )
        )
    if len(timings) == 2:
        ratio = percentile(timings["python"], 50) / percentile(timings["native"], 50)
        print(f"\nnative handles a query in {1/ratio:.2f}x the python backend's time (p50)")
    print(f"\nactive backend: {kernels.BACKEND}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mnemos-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_engine=True):
        p.add_argument("--script", help="scripted provider JSON file")
        p.add_argument("--strict-script", action="store_true")
        p.add_argument("--remote-url", help="chat-completions base URL")
        p.add_argument("--model", default="", help="remote model name")
        if with_engine:
            p.add_argument("--data-dir", default=None)
            p.add_argument("--seeded-ids", action="store_true",
                           help="counter-based ids for reproducible stores")
            p.add_argument("--summary-every", type=int, default=0)
            p.add_argument("--namespace-mode", default="per_speaker",
                           choices=["per_speaker", "per_conversation"])
            p.add_argument("--no-session-reset", action="store_true")

    p_ingest = sub.add_parser("ingest", help="replay a dataset into the engine")
    p_ingest.add_argument("dataset")
    p_ingest.add_argument("--mode", default="dense", choices=["dense", "graph"])
    common(p_ingest)
    p_ingest.set_defaults(func=_cmd_ingest)

    p_run = sub.add_parser("run", help="full benchmark run")
    p_run.add_argument("dataset")
    p_run.add_argument("--mode", default="dense", choices=["dense", "graph", "rag"])
    p_run.add_argument("--k", type=int, default=10)
    p_run.add_argument("--judge", default="scripted", choices=["scripted", "remote", "none"])
    p_run.add_argument("--repeats", type=int, default=1)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--vary-answers", action="store_true",
                       help="regenerate the answer per judge repeat")
    p_run.add_argument("--out", default="bench-run")
    p_run.add_argument("--tokenizer", default="whitespace")
    p_run.add_argument("--vocabulary", help="BPE vocabulary file to register")
    p_run.add_argument("--chunk-tokens", type=int, default=256)
    p_run.add_argument("--snapshot", action="store_true")
    common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_report = sub.add_parser("report", help="rebuild report from a run directory")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=_cmd_report)

    p_kernels = sub.add_parser("kernels", help="compare scan kernel backends")
    p_kernels.add_argument("--count", type=int, default=5000)
    p_kernels.add_argument("--dim", type=int, default=256)
    p_kernels.add_argument("--queries", type=int, default=100)
    p_kernels.add_argument("--k", type=int, default=10)
    p_kernels.add_argument("--seed", type=int, default=0)
    p_kernels.set_defaults(func=_cmd_kernels)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
