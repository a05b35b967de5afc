"""Oracles: exact brute-force search and the dense-LUT IVFPQ pipeline."""

from __future__ import annotations

import numpy as np

from .dataset_io import Dataset, Metric, NeighborTable
from .search import QueryResult, filter_clusters, select_topk
from .topk import topk_rows
from .trainer import Codebook, Index


def _rows(x) -> np.ndarray:
    return x.data if isinstance(x, Dataset) else np.atleast_2d(np.asarray(x, dtype=np.float64))


def brute_force_topk(base, queries, metric, k: int, chunk: int = 256) -> NeighborTable:
    """Exact top-k by full scan. L2 scores are squared distances."""
    metric = Metric.parse(metric)
    x, q = _rows(base), _rows(queries)
    if x.shape[1] != q.shape[1]:
        raise ValueError(f"base dimension {x.shape[1]} != query dimension {q.shape[1]}")
    if k > x.shape[0]:
        raise ValueError(f"k={k} exceeds base size {x.shape[0]}")
    norms = np.einsum("ij,ij->i", x, x)
    ids = np.empty((q.shape[0], k), dtype=np.int64)
    scores = np.empty((q.shape[0], k))
    for i in range(0, q.shape[0], chunk):
        qc = q[i:i + chunk]
        dots = qc @ x.T
        if metric is Metric.L2:
            dist = np.maximum(norms[None, :] - 2.0 * dots + np.einsum("ij,ij->i", qc, qc)[:, None], 0.0)
            ids[i:i + chunk], scores[i:i + chunk] = topk_rows(dist, k)
        else:
            ids[i:i + chunk], scores[i:i + chunk] = topk_rows(dots, k, largest=True)
    return NeighborTable(ids, scores)


def dense_lut(query, residuals, codebook: Codebook, metric=Metric.L2) -> np.ndarray:
    """Full table ``(nprobs, n_sub, E)``.

    L2: squared distance from each probe's residual projection to each entry.
    IP: dot product of the query projection with each entry (same for every
    probe; the centroid term is added by the caller).
    """
    metric = Metric.parse(metric)
    res = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    n_sub = codebook.n_sub
    if metric is Metric.L2:
        proj = res.reshape(res.shape[0], n_sub, 1, 2)
        diff = proj - codebook.entries[None, :, :, :]
        return (diff * diff).sum(axis=3)
    q = np.asarray(query, dtype=np.float64).reshape(1, n_sub, 1, 2)
    lut = (q * codebook.entries[None, :, :, :]).sum(axis=3)
    return np.broadcast_to(lut, (res.shape[0],) + lut.shape[1:]).copy()


def ivfpq_reference_search(queries, index: Index, nprobs: int, k: int) -> list[QueryResult]:
    """Classic IVFPQ: score every point of the probed clusters from the dense LUT."""
    q_all = _rows(queries)
    offsets, members = index.cluster_members()
    sub = np.arange(index.n_sub)
    largest = index.metric is Metric.INNER_PRODUCT
    out = []
    for q in q_all:
        q = index.pad(q)
        probes = filter_clusters(q, index.ivf, index.metric, nprobs)
        lut = dense_lut(q, probes.residuals, index.codebook, index.metric)
        ids, scores = [], []
        for p, c in enumerate(probes.ids):
            pts = members[offsets[c]:offsets[c + 1]]
            s = lut[p][sub[None, :], index.codes[pts]].sum(axis=1)
            if largest:
                s = s + probes.scores[p]
            ids.append(pts)
            scores.append(s)
        ids = np.concatenate(ids)
        scores = np.concatenate(scores)
        res = select_topk(ids, scores, k, largest)
        res.op_counts = {"dense_lut_values": nprobs * index.n_sub * index.e,
                         "accumulations": int(len(ids) * index.n_sub)}
        out.append(res)
    return out
