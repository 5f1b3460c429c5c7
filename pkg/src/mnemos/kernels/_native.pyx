# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scan kernel: fused cosine scoring and top-k selection.

One pass over a row-major matrix of stored vectors keeps a k-sized
sorted buffer, so no full score array is materialized and no argsort
runs afterwards. Rows must be in insertion order; score ties resolve to
the earlier row, matching the index's documented ordering.
"""

import numpy as np


cdef inline double _row_dot(const double* row, const double* query, Py_ssize_t d) noexcept nogil:
    # four independent accumulators break the FP-add dependency chain;
    # the summation order stays fixed, so results are deterministic
    cdef double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0
    cdef Py_ssize_t j = 0
    while j + 4 <= d:
        acc0 += row[j] * query[j]
        acc1 += row[j + 1] * query[j + 1]
        acc2 += row[j + 2] * query[j + 2]
        acc3 += row[j + 3] * query[j + 3]
        j += 4
    while j < d:
        acc0 += row[j] * query[j]
        j += 1
    return (acc0 + acc1) + (acc2 + acc3)


def cosine_scores(double[:, ::1] matrix, double[::1] norms,
                  double[::1] query, double query_norm):
    """Cosine similarity of ``query`` against every row of ``matrix``."""
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_view = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out_view[i] = _row_dot(&matrix[i, 0], &query[0], d) / (norms[i] * query_norm)
    return out


def top_k_indices(double[:, ::1] matrix, double[::1] norms,
                  double[::1] query, double query_norm, Py_ssize_t k):
    """Row indices and scores of the k best rows, score-descending with
    ties broken toward the earlier row."""
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    if k > n:
        k = n
    indices = np.empty(k, dtype=np.int64)
    scores = np.empty(k, dtype=np.float64)
    cdef long long[::1] idx_view = indices
    cdef double[::1] sc_view = scores
    cdef Py_ssize_t count = 0, i, pos
    cdef double score
    with nogil:
        for i in range(n):
            score = _row_dot(&matrix[i, 0], &query[0], d) / (norms[i] * query_norm)
            if count < k:
                pos = count
                while pos > 0 and sc_view[pos - 1] < score:
                    sc_view[pos] = sc_view[pos - 1]
                    idx_view[pos] = idx_view[pos - 1]
                    pos -= 1
                sc_view[pos] = score
                idx_view[pos] = i
                count += 1
            elif score > sc_view[k - 1]:
                pos = k - 1
                while pos > 0 and sc_view[pos - 1] < score:
                    sc_view[pos] = sc_view[pos - 1]
                    idx_view[pos] = idx_view[pos - 1]
                    pos -= 1
                sc_view[pos] = score
                idx_view[pos] = i
    return indices, scores


def backend_name():
    return "native"
