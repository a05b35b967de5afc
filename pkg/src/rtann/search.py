"""Online search: cluster filtering, selective LUT via rays, accumulation, top-k.

Modes:

* ``H`` scores only points whose entry was hit in at least one subspace,
  summing the hit distances (squared) and charging ``r_eff(s)^2`` for every
  subspace where the point's entry was not hit.
* ``L`` counts subspaces whose entry was hit.
* ``M`` adds +1 for a hit inside half the pruning radius, 0 for a hit only
  in the outer shell and -1 for a miss.

L and M score every point of the probed clusters; higher is better.
"""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .bvh import traverse_batch
from .dataset_io import Dataset, Metric
from .scene import ray_arrays, t_hit_to_ip, t_hit_to_l2
from .topk import topk_order
from .trainer import Index, IvfModel


class Mode(str, enum.Enum):
    H = "h"
    M = "m"
    L = "l"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        v = str(value).lower()
        aliases = {"h": cls.H, "h_exact": cls.H, "m": cls.M, "m_hitcount_penalty": cls.M,
                   "l": cls.L, "l_hitcount": cls.L}
        if v not in aliases:
            raise ValueError(f"unknown mode {value!r}")
        return aliases[v]


@dataclass(frozen=True)
class SearchParams:
    nprobs: int
    k: int
    thres_scale: float = 1.0
    mode: Mode = Mode.H
    ip_floor: float | None = None
    rerank: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.nprobs < 1 or self.k < 1:
            raise ValueError("nprobs and k must be >= 1")
        if not self.thres_scale >= 0:
            raise ValueError("thres_scale must be non-negative")


NO_PRUNE = float("inf")


@dataclass
class QueryResult:
    ids: np.ndarray
    scores: np.ndarray
    timings: dict = field(default_factory=dict)
    op_counts: dict = field(default_factory=dict)
    underfull: bool = False


@dataclass(frozen=True)
class Probes:
    ids: np.ndarray        # (nprobs,) cluster ids, best first
    scores: np.ndarray     # filter scores (squared L2 or inner product)
    residuals: np.ndarray  # (nprobs, D) query minus centroid


def filter_clusters(query, ivf: IvfModel, metric, nprobs: int) -> Probes:
    """The ``nprobs`` closest centroids; ties go to the lower cluster id."""
    metric = Metric.parse(metric)
    if nprobs > ivf.c:
        raise ValueError(f"nprobs={nprobs} exceeds cluster count {ivf.c}")
    q = np.asarray(query, dtype=np.float64)
    dots = ivf.centroids @ q
    if metric is Metric.L2:
        scores = ivf.sq_norms - 2.0 * dots + q @ q
        pos = topk_order(scores, np.arange(ivf.c), nprobs)
    else:
        scores = dots
        pos = topk_order(scores, np.arange(ivf.c), nprobs, largest=True)
    return Probes(pos, scores[pos], q[None, :] - ivf.centroids[pos])


@dataclass
class L2Lut:
    """Hit lists per (probe, subspace), stored padded.

    ``entries[p, s, :n_hits[p, s]]`` are the hit entry ids and ``values`` the
    matching distances (L2) or inner products (IP). ``t_hit`` keeps the raw
    travel times for the hit-count modes.
    """

    probes: np.ndarray
    entries: np.ndarray
    values: np.ndarray
    t_hit: np.ndarray
    n_hits: np.ndarray
    r_eff: np.ndarray
    t_max: np.ndarray
    sphere_tests: int = 0
    nodes_visited: int = 0

    def lists(self, p: int, s: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_hits[p, s]
        return self.entries[p, s, :n], self.values[p, s, :n]

    @property
    def lut_values(self) -> int:
        return int(self.n_hits.sum())


def build_selective_lut(query, probes: Probes, index: Index, params: SearchParams) -> L2Lut:
    q = np.asarray(query, dtype=np.float64)
    scene = index.scene
    n_sub, n_e = index.n_sub, index.e
    nprobs = len(probes.ids)
    if index.metric is Metric.L2:
        proj = probes.residuals.reshape(nprobs, n_sub, 2)
        thresholds = index.predict_thresholds(proj)
    else:
        thresholds = None
    ox, oy, oz, t_max, r_eff = ray_arrays(q, index.ivf.centroids[probes.ids], thresholds,
                                          params.thres_scale, scene, params.ip_floor)
    n_rays = nprobs * n_sub
    out_idx = np.empty((n_rays, n_e), dtype=np.int64)
    out_t = np.empty((n_rays, n_e), dtype=np.float64)
    out_n = np.empty(n_rays, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    ok = traverse_batch(*index.bvh.kernel_args(), ox.ravel(), oy.ravel(), oz.ravel(),
                        t_max.ravel(), out_idx, out_t, out_n, counters)
    if not ok:
        raise RuntimeError("a ray hit more spheres than its subspace holds; scene layers overlap")
    n_hits = out_n.reshape(nprobs, n_sub)
    mask = np.arange(n_e)[None, :] < out_n[:, None]
    sph = np.where(mask, out_idx, 0)
    entries = np.where(mask, scene.entry_ids[sph], -1).reshape(nprobs, n_sub, n_e)
    t_hit = np.where(mask, out_t, np.nan).reshape(nprobs, n_sub, n_e)
    R = scene.R[None, :, None]
    L = scene.L[None, :, None]
    t_fill = np.where(np.isnan(t_hit), L, t_hit)
    if index.metric is Metric.L2:
        values = t_hit_to_l2(t_fill, R, L)
    else:
        qn2 = (q.reshape(n_sub, 2) ** 2).sum(axis=1)[None, :, None]
        values = t_hit_to_ip(t_fill, qn2, R, L)
    values = np.where(np.isnan(t_hit), np.nan, values)
    return L2Lut(probes.ids, entries, values, t_hit, n_hits, r_eff, t_max,
                 sphere_tests=int(counters[1]), nodes_visited=int(counters[0]))


@numba.njit(cache=True, nogil=True)
def _accumulate(offsets, ids, probe_clusters, n_sub, n_e, entries, values, n_hits, pen,
                sum_val, sum_pen, cnt, touched):
    n_touched = 0
    n_acc = 0
    for p in range(probe_clusters.shape[0]):
        c = probe_clusters[p]
        for s in range(n_sub):
            for h in range(n_hits[p, s]):
                key = (c * n_sub + s) * n_e + entries[p, s, h]
                v = values[p, s, h]
                for j in range(offsets[key], offsets[key + 1]):
                    pid = ids[j]
                    if cnt[pid] == 0:
                        touched[n_touched] = pid
                        n_touched += 1
                    cnt[pid] += 1
                    sum_val[pid] += v
                    sum_pen[pid] += pen[p, s]
                    n_acc += 1
    return n_touched, n_acc


@numba.njit(cache=True, nogil=True)
def _hitcount(offsets, ids, probe_clusters, n_sub, n_e, entries, weight, n_hits, score):
    n_acc = 0
    for p in range(probe_clusters.shape[0]):
        c = probe_clusters[p]
        for s in range(n_sub):
            for h in range(n_hits[p, s]):
                key = (c * n_sub + s) * n_e + entries[p, s, h]
                w = weight[p, s, h]
                for j in range(offsets[key], offsets[key + 1]):
                    score[ids[j]] += w
                    n_acc += 1
    return n_acc


class Scratch:
    """Per-thread score buffers sized to the base set; reset after each query."""

    def __init__(self, n: int):
        self.sum_val = np.zeros(n)
        self.sum_pen = np.zeros(n)
        self.cnt = np.zeros(n, dtype=np.int64)
        self.touched = np.empty(n, dtype=np.int64)
        self.count = np.zeros(n, dtype=np.int64)


def _probe_position(index: Index, probes: Probes, pids: np.ndarray) -> np.ndarray:
    pos = np.full(index.c, -1, dtype=np.int64)
    pos[probes.ids] = np.arange(len(probes.ids))
    return pos[index.ivf.labels[pids]]


def _exact_scores(lut: L2Lut, index: Index, probes: Probes, scratch: Scratch):
    """Shared core of mode H: returns (touched ids, scores, accumulations)."""
    n_sub = index.n_sub
    if index.metric is Metric.L2:
        vals = np.nan_to_num(lut.values) ** 2
        pen = np.nan_to_num(lut.r_eff) ** 2
    else:
        vals = np.nan_to_num(lut.values)
        pen = np.zeros(lut.n_hits.shape)
    n_t, n_acc = _accumulate(index.inv.offsets, index.inv.ids, probes.ids, n_sub, index.e,
                             lut.entries, vals, lut.n_hits, pen,
                             scratch.sum_val, scratch.sum_pen, scratch.cnt, scratch.touched)
    pids = scratch.touched[:n_t].copy()
    pidx = _probe_position(index, probes, pids)
    if index.metric is Metric.L2:
        missing = pen.sum(axis=1)[pidx] - scratch.sum_pen[pids]
        scores = scratch.sum_val[pids] + np.where(scratch.cnt[pids] == n_sub, 0.0, missing)
    else:
        scores = scratch.sum_val[pids] + probes.scores[pidx]
    scratch.sum_val[pids] = 0.0
    scratch.sum_pen[pids] = 0.0
    scratch.cnt[pids] = 0
    return pids, scores, n_acc


def accumulate_exact(lut: L2Lut, index: Index, probes: Probes, scratch: Scratch | None = None):
    """Mode-H scores as ``(ids ascending, scores, accumulations)``.

    Points never hit are left out. In inner-product mode the centroid term
    ``<q, c>`` is included and missing subspaces contribute nothing.
    """
    scratch = scratch or Scratch(index.n_points)
    pids, scores, n_acc = _exact_scores(lut, index, probes, scratch)
    order = np.argsort(pids)
    return pids[order], scores[order], n_acc


def hit_weights(lut: L2Lut, index: Index, mode: Mode) -> np.ndarray:
    mode = Mode.parse(mode)
    if mode is Mode.L:
        return np.ones(lut.entries.shape, dtype=np.int64)
    if mode is not Mode.M:
        raise ValueError("hit-count scoring needs mode L or M")
    if index.metric is not Metric.L2:
        raise ValueError("the inner-sphere penalty mode is defined for the L2 metric only")
    R = index.scene.R[None, :]
    L = index.scene.L[None, :]
    t_inner = L - np.sqrt(np.maximum(R * R - lut.r_eff ** 2 / 4.0, 0.0))
    inner = lut.t_hit <= t_inner[:, :, None]
    # a miss scores -1, so an outer hit lifts it to 0 and an inner hit to +1
    return np.where(inner, 2, 1).astype(np.int64)


def score_hitcount(lut: L2Lut, index: Index, probes: Probes, mode,
                   scratch: Scratch | None = None):
    """Hit-count scores for every point of the probed clusters.

    Returns ``(ids ascending, integer scores, accumulations)``.
    """
    mode = Mode.parse(mode)
    scratch = scratch or Scratch(index.n_points)
    weight = hit_weights(lut, index, mode)
    n_acc = _hitcount(index.inv.offsets, index.inv.ids, probes.ids, index.n_sub, index.e,
                      lut.entries, weight, lut.n_hits, scratch.count)
    offsets, members = index.cluster_members()
    pids = np.sort(np.concatenate([members[offsets[c]:offsets[c + 1]] for c in probes.ids]))
    scores = scratch.count[pids].copy()
    scratch.count[pids] = 0
    if mode is Mode.M:
        scores -= index.n_sub
    return pids, scores, n_acc


def select_topk(ids, scores, k: int, largest: bool = False) -> QueryResult:
    """Best ``k`` by score, ties broken by ascending id; flags short results."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    pos = topk_order(scores, ids, k, largest)
    return QueryResult(ids[pos], scores[pos], underfull=len(pos) < k)


def search_one(query, index: Index, params: SearchParams, scratch: Scratch | None = None) -> QueryResult:
    scratch = scratch or Scratch(index.n_points)
    q = index.pad(query)
    t0 = time.perf_counter_ns()
    probes = filter_clusters(q, index.ivf, index.metric, params.nprobs)
    t1 = time.perf_counter_ns()
    lut = build_selective_lut(q, probes, index, params)
    t2 = time.perf_counter_ns()
    largest = index.metric is Metric.INNER_PRODUCT
    if params.mode is Mode.H:
        pids, scores, n_acc = _exact_scores(lut, index, probes, scratch)
        res = select_topk(pids, scores, params.k, largest)
    else:
        pids, counts, n_acc = score_hitcount(lut, index, probes, params.mode, scratch)
        if params.rerank and params.mode is Mode.M:
            short = pids[topk_order(counts, pids, 4 * params.k, largest=True)]
            hp, hs, extra = _exact_scores(lut, index, probes, scratch)
            n_acc += extra
            exact = dict(zip(hp.tolist(), hs.tolist()))
            pidx = _probe_position(index, probes, short)
            fallback = np.nan_to_num(lut.r_eff) ** 2
            fallback = fallback.sum(axis=1)[pidx]
            rescored = np.array([exact.get(int(p), f) for p, f in zip(short, fallback)])
            res = select_topk(short, rescored, params.k, largest)
        else:
            res = select_topk(pids, counts, params.k, largest=True)
    t3 = time.perf_counter_ns()
    res.timings = {"filter_ns": t1 - t0, "lut_ns": t2 - t1, "distcalc_ns": t3 - t2}
    res.op_counts = {
        "sphere_tests": lut.sphere_tests,
        "lut_values": lut.lut_values,
        "accumulations": int(n_acc),
        "nodes_visited": lut.nodes_visited,
        "dense_lut_values": len(probes.ids) * index.n_sub * index.e,
    }
    return res


def _check_queries(queries, index: Index) -> np.ndarray:
    if isinstance(queries, Dataset):
        if queries.n and queries.metric is not index.metric:
            raise ValueError(f"query metric {queries.metric.value} does not match index metric "
                             f"{index.metric.value}")
        data = queries.data
    else:
        data = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if data.shape[0] and data.shape[1] not in (index.d_orig, index.d):
        raise ValueError(f"query dimension {data.shape[1]} does not match index dimension {index.d_orig}")
    return data


def search_batch(queries, index: Index, params: SearchParams, threads: int = 1) -> list[QueryResult]:
    """Search every query. Results do not depend on ``threads``."""
    data = _check_queries(queries, index)
    nq = data.shape[0]
    if nq == 0:
        return []
    threads = max(1, min(int(threads), nq))

    def run(rows):
        scratch = Scratch(index.n_points)
        return [search_one(data[i], index, params, scratch) for i in rows]

    chunks = np.array_split(np.arange(nq), threads)
    if threads == 1:
        return run(chunks[0])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(run, chunks))
    return [r for part in parts for r in part]


def results_to_arrays(results: list[QueryResult], k: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack results into ``(q, k)`` arrays, padding short rows with -1 / NaN."""
    ids = np.full((len(results), k), -1, dtype=np.int64)
    scores = np.full((len(results), k), np.nan)
    for i, r in enumerate(results):
        ids[i, :len(r.ids)] = r.ids
        scores[i, :len(r.scores)] = r.scores
    return ids, scores
