"""NumPy implementation of the scan kernel, used when the compiled
extension is unavailable or explicitly disabled."""

import numpy as np


def cosine_scores(
    matrix: np.ndarray,
    norms: np.ndarray,
    query: np.ndarray,
    query_norm: float,
) -> np.ndarray:
    """Cosine similarity of ``query`` against every row of ``matrix``."""
    return (matrix @ query) / (norms * query_norm)


def top_k_indices(
    matrix: np.ndarray,
    norms: np.ndarray,
    query: np.ndarray,
    query_norm: float,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Row indices and scores of the k best rows, score-descending with
    ties broken toward the earlier row (lexsort is stable)."""
    scores = cosine_scores(matrix, norms, query, query_norm)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))[:k]
    return order.astype(np.int64), scores[order]


def backend_name() -> str:
    return "python"
