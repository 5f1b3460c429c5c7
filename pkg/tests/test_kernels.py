"""Backend parity for the scan kernels."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from mnemos import kernels


def _random_unit_rows(rng, n, d):
    m = rng.normal(size=(n, d))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return np.ascontiguousarray(m)


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(11)
    matrix = _random_unit_rows(rng, 800, 48)
    matrix[17] = matrix[3]  # exact duplicates to exercise ties
    matrix[512] = matrix[3]
    norms = np.linalg.norm(matrix, axis=1)
    queries = _random_unit_rows(rng, 25, 48)
    return matrix, norms, queries


def test_scores_agree_across_backends(data):
    matrix, norms, queries = data
    backends = kernels.available_backends()
    for q in queries:
        q = np.ascontiguousarray(q)
        results = {
            name: impl.cosine_scores(matrix, norms, q, 1.0)
            for name, impl in backends.items()
        }
        reference = results.pop("python")
        for name, scores in results.items():
            assert np.allclose(scores, reference, atol=1e-12), name


def test_top_k_order_identical_across_backends(data):
    matrix, norms, queries = data
    backends = kernels.available_backends()
    for q in queries:
        q = np.ascontiguousarray(q)
        for k in (1, 5, 37, 800):
            per_backend = {
                name: impl.top_k_indices(matrix, norms, q, 1.0, k)
                for name, impl in backends.items()
            }
            ref_idx, ref_scores = per_backend.pop("python")
            for name, (idx, scores) in per_backend.items():
                assert list(idx) == list(ref_idx), (name, k)
                assert np.allclose(scores, ref_scores, atol=1e-12)


def test_exact_ties_resolve_to_earlier_row(data):
    matrix, norms, _ = data
    query = np.ascontiguousarray(matrix[3])
    for impl in kernels.available_backends().values():
        idx, scores = impl.top_k_indices(matrix, norms, query, 1.0, 3)
        assert list(idx) == [3, 17, 512]
        assert scores[0] == scores[1] == scores[2]


def test_env_var_forces_python_backend():
    code = "import mnemos.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, MNEMOS_KERNEL="python")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "python"


def test_native_backend_is_active_when_built():
    if "native" not in kernels.available_backends():
        pytest.skip("extension not built")
    env = {k: v for k, v in os.environ.items() if k != "MNEMOS_KERNEL"}
    code = "import mnemos.kernels as k; print(k.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "native"
