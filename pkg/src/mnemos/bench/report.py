"""Aggregate question results into the benchmark report.

The report carries search/total latency percentiles, mean retrieval
context tokens, and per-category plus overall accuracy. The judge score
is the fraction of questions labeled CORRECT, averaged over repeated
judge runs with a population standard deviation.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import jsonschema

from .dataset import CATEGORIES
from .stats import percentile

REPORT_SCHEMA: dict = {
    "type": "object",
    "required": [
        "question_count",
        "repeats",
        "tokenizer_id",
        "latency",
        "context_tokens_mean",
        "overall",
        "categories",
        "judge_errors",
    ],
    "properties": {
        "question_count": {"type": "integer", "minimum": 0},
        "repeats": {"type": "integer", "minimum": 1},
        "tokenizer_id": {"type": "string"},
        "latency": {
            "type": "object",
            "required": ["search", "total"],
            "properties": {
                "search": {"$ref": "#/$defs/phase"},
                "total": {"$ref": "#/$defs/phase"},
            },
        },
        "context_tokens_mean": {"type": "number", "minimum": 0},
        "overall": {"$ref": "#/$defs/bucket"},
        "categories": {
            "type": "object",
            "required": list(CATEGORIES),
            "properties": {c: {"$ref": "#/$defs/bucket"} for c in CATEGORIES},
        },
        "judge_errors": {"type": "integer", "minimum": 0},
    },
    "$defs": {
        "phase": {
            "type": "object",
            "required": ["p50_seconds", "p95_seconds", "sample_count"],
            "properties": {
                "p50_seconds": {"type": "number", "minimum": 0},
                "p95_seconds": {"type": "number", "minimum": 0},
                "sample_count": {"type": "integer", "minimum": 0},
            },
        },
        "bucket": {
            "type": "object",
            "required": ["count", "f1_mean", "bleu1_mean", "j_mean", "j_std"],
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "f1_mean": {"type": ["number", "null"]},
                "bleu1_mean": {"type": ["number", "null"]},
                "j_mean": {"type": ["number", "null"]},
                "j_std": {"type": ["number", "null"]},
            },
        },
    },
}


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _judge_runs(results: list[dict], repeats: int, subset=None) -> tuple[float | None, float | None]:
    """Mean and population std of the CORRECT fraction across judge runs.

    The mean is one division of integer totals, so a scripted judge
    yields the exact rational correct/total."""
    rows = [r for r in results if subset is None or r["category"] == subset]
    if not rows or repeats < 1:
        return None, None
    corrects = []
    for run_index in range(repeats):
        correct = 0
        for row in rows:
            labels = row.get("judge_labels", [])
            if run_index < len(labels) and labels[run_index] == "CORRECT":
                correct += 1
        corrects.append(correct)
    mean = sum(corrects) / (len(rows) * repeats)
    variance = sum((c / len(rows) - mean) ** 2 for c in corrects) / repeats
    return mean, math.sqrt(variance)


def build_report(run: dict) -> dict:
    results: list[dict] = run["results"]
    repeats: int = run.get("repeats", 1)
    search = [r["search_seconds"] for r in results]
    total = [r["total_seconds"] for r in results]
    tokens = [r["context_tokens"] for r in results]

    def phase(samples: list[float]) -> dict:
        if not samples:
            return {"p50_seconds": 0.0, "p95_seconds": 0.0, "sample_count": 0}
        return {
            "p50_seconds": percentile(samples, 50),
            "p95_seconds": percentile(samples, 95),
            "sample_count": len(samples),
        }

    def bucket(category: str | None) -> dict:
        rows = [r for r in results if category is None or r["category"] == category]
        j_mean, j_std = _judge_runs(results, repeats, category)
        return {
            "count": len(rows),
            "f1_mean": _mean([r["f1"] for r in rows if not r["failed"]]),
            "bleu1_mean": _mean([r["bleu1"] for r in rows if not r["failed"]]),
            "j_mean": j_mean,
            "j_std": j_std,
        }

    report = {
        "question_count": len(results),
        "repeats": repeats,
        "tokenizer_id": run.get("tokenizer_id", "whitespace"),
        "latency": {"search": phase(search), "total": phase(total)},
        "context_tokens_mean": (sum(tokens) / len(tokens)) if tokens else 0.0,
        "overall": bucket(None),
        "categories": {c: bucket(c) for c in CATEGORIES},
        "judge_errors": sum(
            1 for r in results for label in r.get("judge_labels", []) if label == "ERROR"
        ),
    }
    jsonschema.validate(report, REPORT_SCHEMA)
    return report


def render_table(report: dict) -> str:
    """Aligned text rendering of the report."""

    def fmt(value, digits=3):
        if value is None:
            return "-"
        return f"{value:.{digits}f}"

    lines = []
    lat = report["latency"]
    lines.append(
        "{:<18} {:>12} {:>12} {:>12} {:>12} {:>14} {:>16}".format(
            "", "search p50", "search p95", "total p50", "total p95",
            "context tokens", "overall J",
        )
    )
    overall = report["overall"]
    j_text = "-"
    if overall["j_mean"] is not None:
        j_text = f"{overall['j_mean']:.3f} ± {overall['j_std']:.3f}"
    lines.append(
        "{:<18} {:>12} {:>12} {:>12} {:>12} {:>14} {:>16}".format(
            "run",
            fmt(lat["search"]["p50_seconds"]),
            fmt(lat["search"]["p95_seconds"]),
            fmt(lat["total"]["p50_seconds"]),
            fmt(lat["total"]["p95_seconds"]),
            fmt(report["context_tokens_mean"], 1),
            j_text,
        )
    )
    lines.append("")
    lines.append(
        "{:<14} {:>7} {:>8} {:>8} {:>18}".format("category", "count", "F1", "BLEU-1", "J")
    )
    for category in list(CATEGORIES) + ["overall"]:
        bucket = report["overall"] if category == "overall" else report["categories"][category]
        j_text = "-"
        if bucket["j_mean"] is not None:
            j_text = f"{bucket['j_mean']:.3f} ± {bucket['j_std']:.3f}"
        lines.append(
            "{:<14} {:>7} {:>8} {:>8} {:>18}".format(
                category,
                bucket["count"],
                fmt(bucket["f1_mean"]),
                fmt(bucket["bleu1_mean"]),
                j_text,
            )
        )
    lines.append("")
    lines.append(
        f"tokenizer: {report['tokenizer_id']}   repeats: {report['repeats']}   "
        f"judge errors: {report['judge_errors']}"
    )
    return "\n".join(lines)


def write_report(run_dir: str | Path, run: dict) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    report = build_report(run)
    (run_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8"
    )
    (run_dir / "report.txt").write_text(render_table(report) + "\n", encoding="utf-8")
    return report
