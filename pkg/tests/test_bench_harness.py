"""Harness behavior: dataset loading, replay, answer prompts, judging,
report shape, CLI."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from mnemos import ChatResponse, EngineConfig, MemoryEngine, ScriptedChatProvider
from mnemos.bench.cli import main as bench_main
from mnemos.bench.dataset import CATEGORIES, load_dataset, parse_dataset
from mnemos.bench.harness import (
    answer_question,
    judge,
    render_judge_prompt,
    replay_ingest,
    run_questions,
)
from mnemos.bench.report import REPORT_SCHEMA, build_report, render_table
from mnemos.errors import DatasetError, JudgeParseError
from mnemos.templating import TemplateSet

from conftest import make_engine

FIXTURES = Path(__file__).parent / "fixtures"


def golden_engine() -> tuple[MemoryEngine, ScriptedChatProvider]:
    script = ScriptedChatProvider.from_file(FIXTURES / "golden_script.json", strict=True)
    config = EngineConfig(
        embedding_dim=64,
        deterministic_ids=True,
        summary_refresh_every=0,
        timestamp_facts=True,
        fsync_events=False,
    )
    return MemoryEngine(config=config, chat=script), script


# --------------------------------------------------------------------------
# dataset


def test_load_golden_dataset():
    dataset = load_dataset(FIXTURES / "golden_dataset.json")
    assert dataset.question_count == 10
    conv = dataset.conversations[0]
    assert conv.speakers == ("melanie", "caroline")
    assert len(conv.sessions) == 3
    assert {qa.category for qa in conv.qa} == set(CATEGORIES)


def test_dataset_bad_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"conversations": [\n  {"id" "x"}\n]}')
    with pytest.raises(DatasetError, match=r"line 2"):
        load_dataset(path)


def test_dataset_validation_paths():
    with pytest.raises(DatasetError, match=r"conversations\[0\]\.speakers"):
        parse_dataset({"conversations": [{"id": "c", "speakers": ["only-one"]}]})
    with pytest.raises(DatasetError, match=r"qa\[0\]\.category"):
        parse_dataset(
            {
                "conversations": [
                    {
                        "id": "c",
                        "speakers": ["a", "b"],
                        "sessions": [],
                        "qa": [{"question": "q", "gold_answer": "g", "category": "adversarial"}],
                    }
                ]
            }
        )
    with pytest.raises(DatasetError, match=r"sessions\[0\]\[0\]"):
        parse_dataset(
            {
                "conversations": [
                    {"id": "c", "speakers": ["a", "b"], "sessions": [[{"speaker": "a"}]]}
                ]
            }
        )


# --------------------------------------------------------------------------
# replay


def test_replay_counts_pairs_and_memories():
    dataset = load_dataset(FIXTURES / "golden_dataset.json")
    engine, _ = golden_engine()
    report = replay_ingest(dataset, engine)
    conv = report.conversations[0]
    assert conv.pairs == 12
    assert conv.memories_per_namespace == {"melanie": 4, "caroline": 7}
    assert report.total_seconds > 0
    engine.close()


def test_replay_is_digest_reproducible():
    dataset = load_dataset(FIXTURES / "golden_dataset.json")
    digests = []
    for _ in range(2):
        engine, _ = golden_engine()
        replay_ingest(dataset, engine)
        digests.append(engine.state_digest())
        engine.close()
    assert digests[0] == digests[1]


def test_toy_conversation_ingests_one_pair(lenient_script):
    engine = make_engine(lenient_script)
    dataset = parse_dataset(
        {
            "conversations": [
                {
                    "id": "toy",
                    "speakers": ["a", "b"],
                    "sessions": [
                        [
                            {"speaker": "a", "text": "hello", "timestamp": "2023-01-01T10:00:00+00:00"},
                            {"speaker": "b", "text": "hi", "timestamp": "2023-01-01T10:01:00+00:00"},
                        ]
                    ],
                    "qa": [],
                }
            ]
        }
    )
    report = replay_ingest(dataset, engine)
    assert report.conversations[0].pairs == 1
    engine.close()


def test_session_reset_fences_recent_window(lenient_script):
    engine = make_engine(lenient_script)
    dataset = parse_dataset(
        {
            "conversations": [
                {
                    "id": "c",
                    "speakers": ["a", "b"],
                    "sessions": [
                        [
                            {"speaker": "a", "text": "s1 m1", "timestamp": "2023-01-01T10:00:00+00:00"},
                            {"speaker": "b", "text": "s1 m2", "timestamp": "2023-01-01T10:01:00+00:00"},
                        ],
                        [
                            {"speaker": "a", "text": "s2 m1", "timestamp": "2023-01-02T10:00:00+00:00"},
                            {"speaker": "b", "text": "s2 m2", "timestamp": "2023-01-02T10:01:00+00:00"},
                        ],
                    ],
                    "qa": [],
                }
            ]
        }
    )
    replay_ingest(dataset, engine, session_reset=True)
    from conftest import msg

    prompt = engine.build_extraction_prompt(
        "c",
        msg("a", "s2 m3", "2023-01-02T10:02:00+00:00"),
        msg("b", "s2 m4", "2023-01-02T10:03:00+00:00"),
    )
    assert [m.text for m in prompt.recent] == ["s2 m1", "s2 m2"]
    engine.close()


def test_sessions_not_fenced_without_reset(lenient_script):
    engine = make_engine(lenient_script)
    dataset = parse_dataset(
        {
            "conversations": [
                {
                    "id": "c",
                    "speakers": ["a", "b"],
                    "sessions": [
                        [
                            {"speaker": "a", "text": "s1 m1", "timestamp": "2023-01-01T10:00:00+00:00"},
                            {"speaker": "b", "text": "s1 m2", "timestamp": "2023-01-01T10:01:00+00:00"},
                        ],
                        [
                            {"speaker": "a", "text": "s2 m1", "timestamp": "2023-01-02T10:00:00+00:00"},
                            {"speaker": "b", "text": "s2 m2", "timestamp": "2023-01-02T10:01:00+00:00"},
                        ],
                    ],
                    "qa": [],
                }
            ]
        }
    )
    replay_ingest(dataset, engine, session_reset=False)
    from conftest import msg

    prompt = engine.build_extraction_prompt(
        "c",
        msg("a", "s2 m3", "2023-01-02T10:02:00+00:00"),
        msg("b", "s2 m4", "2023-01-02T10:03:00+00:00"),
    )
    assert [m.text for m in prompt.recent] == ["s1 m1", "s1 m2", "s2 m1", "s2 m2"]
    engine.close()


# --------------------------------------------------------------------------
# answer generation


def test_answer_question_dense_sections():
    dataset = load_dataset(FIXTURES / "golden_dataset.json")
    engine, script = golden_engine()
    replay_ingest(dataset, engine)
    conv = dataset.conversations[0]
    answer, meas = answer_question(
        engine, conv, "What is the name of Melanie's dog?", 10, "dense", script
    )
    assert answer == "Biscuit"
    prompt = meas["prompt"]
    assert "Memories for user melanie:" in prompt
    assert "Memories for user caroline:" in prompt
    assert "The answer should be less than 5-6 words." in prompt
    assert "(4 May 2023) Melanie adopted a golden retriever named Biscuit" in prompt
    assert meas["search_seconds"] <= meas["total_seconds"]
    engine.close()


def test_answer_question_graph_mode_has_four_sections(lenient_script):
    engine = make_engine(lenient_script, graph_enabled=True)
    from mnemos import TripletCandidate

    engine.upsert_triplet(TripletCandidate("Alice", "lives_in", "Paris"), "a")
    dataset = parse_dataset(
        {
            "conversations": [
                {"id": "c", "speakers": ["a", "b"], "sessions": [], "qa": []}
            ]
        }
    )
    conv = dataset.conversations[0]
    answerer = ScriptedChatProvider(strict=False, default_response=ChatResponse(text="Paris"))
    answer, meas = answer_question(engine, conv, "Where does Alice live?", 5, "graph", answerer)
    prompt = meas["prompt"]
    for section in (
        "Memories for user a:",
        "Relations for user a:",
        "Memories for user b:",
        "Relations for user b:",
    ):
        assert section in prompt
    assert "Alice lives_in Paris" in prompt
    assert "Analyze the knowledge graph relations" in prompt
    engine.close()


def test_empty_engine_still_completes(lenient_script):
    engine = make_engine(lenient_script)
    dataset = parse_dataset(
        {"conversations": [{"id": "c", "speakers": ["a", "b"], "sessions": [], "qa": []}]}
    )
    answerer = ScriptedChatProvider(strict=False, default_response=ChatResponse(text="no idea"))
    answer, meas = answer_question(
        engine, dataset.conversations[0], "anything?", 3, "dense", answerer
    )
    assert answer == "no idea"
    assert meas["context"] == ""
    assert "(none)" in meas["prompt"]
    engine.close()


def test_provider_failure_marks_question_failed(lenient_script):
    engine = make_engine(lenient_script)
    dataset = parse_dataset(
        {
            "conversations": [
                {
                    "id": "c",
                    "speakers": ["a", "b"],
                    "sessions": [],
                    "qa": [
                        {"question": "q?", "gold_answer": "g", "category": "single_hop"}
                    ],
                }
            ]
        }
    )

    from mnemos.errors import ProviderUnavailableError

    class Down:
        def chat(self, request):
            raise ProviderUnavailableError("backend gone")

    results = run_questions(dataset, engine, Down(), None, k=3, mode="dense")
    assert results[0].failed is True
    assert results[0].generated is None
    engine.close()


# --------------------------------------------------------------------------
# judge


def test_judge_prompt_contains_shell_necklace_example():
    templates = TemplateSet()
    prompt = render_judge_prompt(templates, "Where?", "Hawaii", "on the island")
    assert "Gold answer: A shell necklace" in prompt
    assert "Question: Where?" in prompt
    assert "Generated answer: on the island" in prompt


def test_judge_parses_correct_label():
    provider = ScriptedChatProvider(
        strict=False, default_response=ChatResponse(text='{"label": "CORRECT"}')
    )
    verdict = judge(provider, TemplateSet(), "q", "gold", "generated")
    assert verdict.label == "CORRECT"


def test_judge_parses_label_inside_prose():
    provider = ScriptedChatProvider(
        strict=False,
        default_response=ChatResponse(
            text='The topics match nicely.\n{"label": "WRONG"}'
        ),
    )
    assert judge(provider, TemplateSet(), "q", "g", "a").label == "WRONG"


def test_judge_prose_without_json_is_parse_error():
    provider = ScriptedChatProvider(
        strict=False, default_response=ChatResponse(text="definitely CORRECT I think")
    )
    with pytest.raises(JudgeParseError):
        judge(provider, TemplateSet(), "q", "g", "a")


def test_judge_bad_label_value_is_parse_error():
    provider = ScriptedChatProvider(
        strict=False, default_response=ChatResponse(text='{"label": "MAYBE"}')
    )
    with pytest.raises(JudgeParseError):
        judge(provider, TemplateSet(), "q", "g", "a")


def test_judge_errors_counted_not_coerced():
    dataset = load_dataset(FIXTURES / "golden_dataset.json")
    engine, script = golden_engine()
    replay_ingest(dataset, engine)
    bad_judge = ScriptedChatProvider(
        strict=False, default_response=ChatResponse(text="no json at all")
    )
    results = run_questions(dataset, engine, script, bad_judge, k=10, mode="dense")
    assert all(labels == ["ERROR"] for labels in (r.judge_labels for r in results))
    report = build_report(
        {"results": [r.to_dict() for r in results], "repeats": 1, "tokenizer_id": "whitespace"}
    )
    assert report["judge_errors"] == 10
    assert report["overall"]["j_mean"] == 0.0
    engine.close()


def test_worker_pool_preserves_result_order_and_scores():
    dataset = load_dataset(FIXTURES / "golden_dataset.json")
    engine, script = golden_engine()
    replay_ingest(dataset, engine)
    serial = run_questions(dataset, engine, script, script, k=10, mode="dense", workers=1)
    pooled = run_questions(dataset, engine, script, script, k=10, mode="dense", workers=4)
    assert [r.question for r in pooled] == [r.question for r in serial]
    assert [(r.f1, r.bleu1, r.judge_labels) for r in pooled] == [
        (r.f1, r.bleu1, r.judge_labels) for r in serial
    ]
    engine.close()


# --------------------------------------------------------------------------
# report


def golden_run() -> dict:
    dataset = load_dataset(FIXTURES / "golden_dataset.json")
    engine, script = golden_engine()
    replay_ingest(dataset, engine)
    results = run_questions(dataset, engine, script, script, k=10, mode="dense", repeats=3)
    engine.close()
    return {
        "results": [r.to_dict() for r in results],
        "repeats": 3,
        "tokenizer_id": "whitespace",
    }


def test_report_matches_golden_fixture():
    report = build_report(golden_run())
    for phase in report["latency"].values():
        phase["p50_seconds"] = 0.0
        phase["p95_seconds"] = 0.0
    expected = json.loads((FIXTURES / "golden_report.json").read_text())
    assert report == expected


def test_report_schema_and_categories():
    import jsonschema

    report = build_report(golden_run())
    jsonschema.validate(report, REPORT_SCHEMA)
    assert set(report["categories"]) == set(CATEGORIES)
    assert sum(b["count"] for b in report["categories"].values()) == report["question_count"]


def test_every_question_in_exactly_one_bucket():
    run = golden_run()
    seen = [r["question"] for r in run["results"]]
    assert len(seen) == len(set(seen)) == 10
    report = build_report(run)
    assert report["question_count"] == 10


def test_render_table_mentions_all_columns():
    table = render_table(build_report(golden_run()))
    for column in ("search p50", "search p95", "total p50", "total p95",
                   "context tokens", "overall J"):
        assert column in table
    for category in CATEGORIES:
        assert category in table
    assert "0.700 ± 0.000" in table


# --------------------------------------------------------------------------
# CLI


def test_cli_run_and_report(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code = bench_main(
        [
            "run",
            str(FIXTURES / "golden_dataset.json"),
            "--script", str(FIXTURES / "golden_script.json"),
            "--strict-script",
            "--seeded-ids",
            "--k", "10",
            "--repeats", "2",
            "--out", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "run.json").is_file()
    assert (out_dir / "report.json").is_file()
    assert (out_dir / "report.txt").is_file()
    report = json.loads((out_dir / "report.json").read_text())
    assert report["overall"]["j_mean"] == 0.7

    capsys.readouterr()
    assert bench_main(["report", str(out_dir)]) == 0
    assert "overall" in capsys.readouterr().out


def test_cli_ingest(tmp_path, capsys):
    code = bench_main(
        [
            "ingest",
            str(FIXTURES / "golden_dataset.json"),
            "--script", str(FIXTURES / "golden_script.json"),
            "--strict-script",
            "--seeded-ids",
        ]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["conversations"][0]["pairs"] == 12


def test_cli_kernels(capsys):
    assert bench_main(["kernels", "--count", "300", "--dim", "32", "--queries", "5"]) == 0
    out = capsys.readouterr().out
    assert "backend" in out and "python" in out


def test_cli_rag_mode(tmp_path):
    out_dir = tmp_path / "rag-run"
    code = bench_main(
        [
            "run",
            str(FIXTURES / "golden_dataset.json"),
            "--mode", "rag",
            "--judge", "none",
            "--out", str(out_dir),
            "--chunk-tokens", "64",
        ]
    )
    assert code == 0
    run = json.loads((out_dir / "run.json").read_text())
    assert len(run["results"]) == 10
