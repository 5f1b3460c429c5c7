"""F1 / BLEU-1 scoring against hand computations and an independent
brute-force scorer."""

from __future__ import annotations

import math
import random

from hypothesis import given, settings
from hypothesis import strategies as st

from mnemos.bench.scoring import normalize_tokens, score_bleu1, score_f1


def brute_force_scores(gold: str, generated: str) -> tuple[float, float]:
    """Independent scorer: explicit per-token matching without Counter."""

    def norm(text):
        cleaned = "".join(c if (c.isalnum() or c == "_" or c.isspace()) else "" for c in text.lower())
        return cleaned.split()

    g, p = norm(gold), norm(generated)
    if not g and not p:
        return 1.0, 1.0
    remaining = list(g)
    overlap = 0
    for token in p:
        if token in remaining:
            remaining.remove(token)
            overlap += 1
    if not g or not p or overlap == 0:
        f1 = 0.0
    else:
        precision, recall = overlap / len(p), overlap / len(g)
        f1 = 2 * precision * recall / (precision + recall)
    if not p:
        bleu = 0.0
    else:
        brevity = 1.0 if len(p) >= len(g) else math.exp(1 - len(g) / len(p))
        bleu = brevity * (overlap / len(p))
    return f1, bleu


WORDS = ["shell", "necklace", "march", "july", "tea", "alice", "born", "a", "the", "in"]


def test_identical_strings_score_one():
    assert score_f1("a shell necklace", "a shell necklace") == 1.0
    assert score_bleu1("a shell necklace", "a shell necklace") == 1.0


def test_disjoint_tokens_score_zero():
    assert score_f1("a shell necklace", "quarterly revenue") == 0.0
    assert score_bleu1("a shell necklace", "quarterly revenue") == 0.0


def test_shell_necklace_f1_is_point_eight():
    # gold 3 tokens, generated 2, overlap 2:
    # F1 = 2 * (2/2) * (2/3) / ((2/2) + (2/3)) = 0.8
    assert abs(score_f1("a shell necklace", "a necklace") - 0.8) < 1e-9


def test_normalization_rules():
    assert normalize_tokens("  A Shell,   NECKLACE!  ") == ["a", "shell", "necklace"]
    assert score_f1("A shell necklace.", "a SHELL necklace") == 1.0


def test_bleu_brevity_penalty():
    # candidate shorter than reference: BP = exp(1 - 3/2), precision 1
    expected = math.exp(1 - 3 / 2) * 1.0
    assert abs(score_bleu1("a shell necklace", "shell necklace") - expected) < 1e-12


def test_bleu_clipped_counts():
    # "the the the" vs gold with one "the": clipped overlap 1 of 3
    assert abs(score_bleu1("the cat", "the the the") - (1 / 3)) < 1e-12


def test_empty_generated():
    assert score_f1("gold", "") == 0.0
    assert score_bleu1("gold", "...") == 0.0


def test_randomized_cases_match_brute_force():
    rng = random.Random(23)
    for _ in range(200):
        gold = " ".join(rng.choices(WORDS, k=rng.randint(1, 8)))
        generated = " ".join(rng.choices(WORDS, k=rng.randint(0, 8)))
        f1_expected, bleu_expected = brute_force_scores(gold, generated)
        assert abs(score_f1(gold, generated) - f1_expected) < 1e-12
        assert abs(score_bleu1(gold, generated) - bleu_expected) < 1e-12


@settings(max_examples=80, deadline=None)
@given(st.text(max_size=60), st.text(max_size=60))
def test_scoring_is_pure_and_bounded(gold, generated):
    first = score_f1(gold, generated)
    assert first == score_f1(gold, generated)
    assert 0.0 <= first <= 1.0
    bleu = score_bleu1(gold, generated)
    assert bleu == score_bleu1(gold, generated)
    assert 0.0 <= bleu <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=8))
def test_f1_symmetric_under_identical_input(tokens):
    text = " ".join(tokens)
    assert score_f1(text, text) == 1.0


def test_scores_independent_of_surrounding_dataset_order():
    pairs = [("a shell necklace", "a necklace"), ("tea time", "coffee time")]
    forward = [score_f1(g, p) for g, p in pairs]
    backward = [score_f1(g, p) for g, p in reversed(pairs)]
    assert forward == list(reversed(backward))
