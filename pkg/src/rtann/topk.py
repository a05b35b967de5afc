"""Top-k selection with deterministic tie-breaking (ascending id)."""

from __future__ import annotations

import numpy as np


def topk_order(scores: np.ndarray, ids: np.ndarray, k: int, largest: bool = False) -> np.ndarray:
    """Positions of the ``k`` best entries of ``scores``, best first.

    Equal scores are ordered by ascending ``ids``. Uses a partition to find
    the k-th value, then sorts only entries at least that good.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(ids)
    n = scores.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    key = -scores if largest else scores
    if n > k:
        kth = np.partition(key, k - 1)[k - 1]
        pos = np.flatnonzero(key <= kth)
    else:
        pos = np.arange(n)
    order = np.lexsort((ids[pos], key[pos]))
    return pos[order[:k]]


def topk_rows(dist: np.ndarray, k: int, largest: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise top-k over a dense ``(q, n)`` score matrix; column index is the id."""
    q, n = dist.shape
    if k > n:
        raise ValueError(f"k={k} exceeds number of candidates {n}")
    ids = np.empty((q, k), dtype=np.int64)
    out = np.empty((q, k), dtype=np.float64)
    cols = np.arange(n)
    for i in range(q):
        pos = topk_order(dist[i], cols, k, largest)
        ids[i] = pos
        out[i] = dist[i, pos]
    return ids, out
