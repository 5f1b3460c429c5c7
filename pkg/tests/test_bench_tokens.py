"""Token counting: whitespace default and the BPE counter against a
synthetic vocabulary with frozen oracle counts."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import pytest
import regex

from mnemos.bench.tokens import (
    DEFAULT_SPLIT_PATTERN,
    BpeTokenCounter,
    count_tokens,
    known_tokenizers,
    register_tokenizer,
)
from mnemos.errors import UnknownTokenizerError

FIXTURES = Path(__file__).parent / "fixtures"


def test_whitespace_counts():
    assert count_tokens("", "whitespace") == 0
    assert count_tokens("a b c", "whitespace") == 3
    assert count_tokens("  padded   words  ", "whitespace") == 2


def test_unknown_tokenizer_raises():
    with pytest.raises(UnknownTokenizerError):
        count_tokens("text", "made-up-tokenizer")


def test_registry_lists_whitespace():
    assert "whitespace" in known_tokenizers()


def test_register_custom_counter():
    register_tokenizer("chars", len)
    assert count_tokens("abcd", "chars") == 4


# --------------------------------------------------------------------------
# BPE counter


@pytest.fixture(scope="module")
def counter() -> BpeTokenCounter:
    return BpeTokenCounter.from_vocabulary_file(FIXTURES / "mini_vocab.tiktoken")


def oracle_count(counter_ranks: dict, text: str) -> int:
    """Independent merge implementation: global (rank, position) minimum."""
    pattern = regex.compile(DEFAULT_SPLIT_PATTERN)
    total = 0
    for piece in pattern.findall(text):
        raw = piece.encode("utf-8")
        if raw in counter_ranks:
            total += 1
            continue
        parts = [raw[i : i + 1] for i in range(len(raw))]
        while True:
            candidates = [
                (counter_ranks[parts[i] + parts[i + 1]], i)
                for i in range(len(parts) - 1)
                if parts[i] + parts[i + 1] in counter_ranks
            ]
            if not candidates:
                break
            _, i = min(candidates)
            parts = parts[:i] + [parts[i] + parts[i + 1]] + parts[i + 2 :]
        total += len(parts)
    return total


def test_vocab_file_parses(counter):
    assert counter.ranks[b"the"] < len(counter.ranks)
    assert b"a" in counter.ranks


def test_frozen_fixture_counts(counter):
    expected = json.loads((FIXTURES / "mini_vocab_counts.json").read_text())
    for text, count in expected.items():
        assert counter.count(text) == count, text


def test_counter_matches_oracle_on_random_text(counter):
    import random

    rng = random.Random(7)
    alphabet = "the lowest code new growing "
    for _ in range(60):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 60)))
        assert counter.count(text) == oracle_count(counter.ranks, text)


def test_counter_handles_unknown_bytes(counter):
    # non-ASCII bytes are absent from the synthetic vocab: one token per byte
    text = "héllo"
    assert counter.count(text) >= 1


def test_registered_bpe_counter_via_registry(tmp_path):
    vocab = tmp_path / "tiny.tiktoken"
    lines = [
        base64.b64encode(b"a").decode() + " 0",
        base64.b64encode(b"b").decode() + " 1",
        base64.b64encode(b"ab").decode() + " 2",
    ]
    vocab.write_text("\n".join(lines))
    from mnemos.bench.tokens import register_bpe_vocabulary

    register_bpe_vocabulary("tiny", vocab)
    assert count_tokens("abab", "tiny") == 2  # "ab" + "ab"
