"""Latency statistics: nearest-rank percentiles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ..errors import InvalidInputError


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th order statistic."""
    if not samples:
        raise InvalidInputError("percentile of empty samples")
    if not 0 < q < 100:
        raise InvalidInputError("q must lie in (0, 100)")
    ordered = sorted(samples)
    rank = math.ceil(q / 100 * len(ordered))
    return ordered[rank - 1]


@dataclass(frozen=True)
class LatencyStats:
    phase: str  # "search" | "total"
    p50_seconds: float
    p95_seconds: float
    sample_count: int

    @classmethod
    def from_samples(cls, phase: str, samples: Sequence[float]) -> "LatencyStats":
        return cls(
            phase=phase,
            p50_seconds=percentile(samples, 50),
            p95_seconds=percentile(samples, 95),
            sample_count=len(samples),
        )
