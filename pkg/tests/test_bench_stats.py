"""Nearest-rank percentile against a sort-and-index oracle."""

from __future__ import annotations

import math
import random

import pytest

from mnemos.bench.stats import LatencyStats, percentile
from mnemos.errors import InvalidInputError


def test_single_sample_is_every_percentile():
    assert percentile([5], 50) == 5
    assert percentile([5], 95) == 5


def test_uniform_ranks():
    samples = list(range(1, 101))
    assert percentile(samples, 95) == 95
    assert percentile(samples, 50) == 50


def test_empty_and_bad_q_rejected():
    with pytest.raises(InvalidInputError):
        percentile([], 50)
    with pytest.raises(InvalidInputError):
        percentile([1.0], 0)
    with pytest.raises(InvalidInputError):
        percentile([1.0], 100)


def test_matches_sort_and_index_oracle():
    rng = random.Random(13)
    for _ in range(100):
        n = rng.randint(1, 200)
        samples = [rng.uniform(0, 10) for _ in range(n)]
        q = rng.choice([1, 25, 50, 75, 90, 95, 99])
        expected = sorted(samples)[math.ceil(q / 100 * n) - 1]
        assert percentile(samples, q) == expected


def test_order_invariance():
    samples = [9.0, 1.0, 5.0, 3.0]
    assert percentile(samples, 50) == percentile(sorted(samples), 50)


def test_latency_stats_invariant():
    rng = random.Random(3)
    for _ in range(50):
        samples = [rng.uniform(0, 2) for _ in range(rng.randint(1, 60))]
        stats = LatencyStats.from_samples("search", samples)
        assert stats.p50_seconds <= stats.p95_seconds
        assert stats.sample_count == len(samples)
        assert stats.phase == "search"
