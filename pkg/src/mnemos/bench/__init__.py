"""Benchmark harness: dataset replay, answer generation, scoring and
latency/token reporting."""
