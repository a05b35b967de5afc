"""Recall metrics, sweep runner and the entry-usage / locality profilers."""

from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset_io import Metric, NeighborTable, read_groundtruth, read_vecs, write_groundtruth
from .reference import brute_force_topk, ivfpq_reference_search
from .search import NO_PRUNE, Mode, SearchParams, filter_clusters, search_batch
from .trainer import Index, build_index, load_index, save_index

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Bad benchmark configuration; the message carries the location."""


def _id_rows(results) -> list[np.ndarray]:
    if isinstance(results, NeighborTable):
        return list(results.ids)
    if isinstance(results, np.ndarray):
        return list(np.atleast_2d(results))
    return [np.asarray(getattr(r, "ids", r)) for r in results]


def _gt_ids(gt) -> np.ndarray:
    return np.atleast_2d(gt.ids if isinstance(gt, NeighborTable) else np.asarray(gt))


def recall_1_at_k(results, gt, k: int) -> float:
    """Share of queries whose first ``k`` results contain the true nearest neighbor."""
    rows = _id_rows(results)
    true = _gt_ids(gt)
    if true.shape[1] < 1:
        raise ValueError("ground truth needs at least one column")
    if len(rows) != true.shape[0]:
        raise ValueError(f"{len(rows)} result rows vs {true.shape[0]} ground-truth rows")
    if not rows:
        return 0.0
    found = [true[i, 0] in set(np.asarray(r)[:k].tolist()) for i, r in enumerate(rows)]
    return float(np.mean(found))


def recall_a_at_b(results, gt, a: int, b: int) -> float:
    """Mean of ``|top-b retrieved ∩ true top-a| / a`` over queries."""
    rows = _id_rows(results)
    true = _gt_ids(gt)
    if true.shape[1] < a:
        raise ValueError(f"ground truth has {true.shape[1]} columns, need {a}")
    if len(rows) != true.shape[0]:
        raise ValueError(f"{len(rows)} result rows vs {true.shape[0]} ground-truth rows")
    if not rows:
        return 0.0
    hits = [len(set(np.asarray(r)[:b].tolist()) & set(true[i, :a].tolist())) / a
            for i, r in enumerate(rows)]
    return float(np.mean(hits))


# --- profilers -------------------------------------------------------------

@dataclass
class EntryUsage:
    ratios: np.ndarray     # (q, n_sub) used entries / E
    mean: np.ndarray       # (n_sub,)
    max: np.ndarray        # (n_sub,)
    frequency: np.ndarray  # (n_sub, E) use counts by entry rank (closest first)


def _entry_ranks(index: Index, queries) -> np.ndarray:
    """``rank[q, s, e]``: position of entry e when sorted by distance to the
    query's residual projection (against its nearest centroid)."""
    data = queries.data if hasattr(queries, "data") else np.atleast_2d(queries)
    out = np.empty((data.shape[0], index.n_sub, index.e), dtype=np.int64)
    for i, q in enumerate(data):
        q = index.pad(q)
        probe = filter_clusters(q, index.ivf, index.metric, 1)
        proj = probe.residuals[0].reshape(index.n_sub, 1, 2)
        dist = ((index.codebook.entries - proj) ** 2).sum(axis=2)
        order = np.argsort(dist, axis=1, kind="stable")
        np.put_along_axis(out[i], order, np.arange(index.e)[None, :], axis=1)
    return out


def entry_usage_from_codes(topk_codes: np.ndarray, ranks: np.ndarray, n_entries: int) -> EntryUsage:
    """``topk_codes``: ``(q, t, n_sub)`` codes of each query's true top-t."""
    nq, _, n_sub = topk_codes.shape
    ratios = np.empty((nq, n_sub))
    freq = np.zeros((n_sub, n_entries))
    for i in range(nq):
        for s in range(n_sub):
            used = np.unique(topk_codes[i, :, s])
            ratios[i, s] = len(used) / n_entries
            np.add.at(freq[s], ranks[i, s, used], 1.0)
    return EntryUsage(ratios, ratios.mean(axis=0), ratios.max(axis=0), freq)


def profile_entry_usage(index: Index, queries, gt, top: int = 100) -> EntryUsage:
    ids = _gt_ids(gt)[:, :top]
    return entry_usage_from_codes(index.codes[ids], _entry_ranks(index, queries), index.e)


def locality_cdf_from_codes(topk_codes: np.ndarray, ranks: np.ndarray, n_entries: int) -> np.ndarray:
    """``(n_sub, E)``: share of top-t points whose entry rank is ``<= r``, averaged over queries."""
    nq, t, n_sub = topk_codes.shape
    cdf = np.zeros((n_sub, n_entries))
    for i in range(nq):
        for s in range(n_sub):
            r = ranks[i, s, topk_codes[i, :, s]]
            cdf[s] += np.cumsum(np.bincount(r, minlength=n_entries)) / t
    return cdf / max(nq, 1)


def profile_locality_cdf(index: Index, queries, gt, top: int = 100) -> np.ndarray:
    ids = _gt_ids(gt)[:, :top]
    return locality_cdf_from_codes(index.codes[ids], _entry_ranks(index, queries), index.e)


def write_cdf_csv(path, cdf: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["subspace", "rank", "fraction_of_entries", "cdf"])
        n_sub, n_e = cdf.shape
        for s in range(n_sub):
            for r in range(n_e):
                w.writerow([s, r + 1, (r + 1) / n_e, f"{cdf[s, r]:.6f}"])


def write_usage_csv(path, usage: EntryUsage) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["subspace", "mean_usage_ratio", "max_usage_ratio"])
        for s, (m, x) in enumerate(zip(usage.mean, usage.max)):
            w.writerow([s, f"{m:.6f}", f"{x:.6f}"])


# --- sweeps ----------------------------------------------------------------

CONFIG_KEYS = {"base", "queries", "groundtruth", "metric", "clusters", "entries", "nprobs_list",
               "scale_list", "modes", "k", "seed", "threads"}
OPTIONAL_KEYS = {"index", "out_dir", "warmup", "repeats", "sample_n", "reference"}


@dataclass
class BenchRow:
    nprobs: int
    thres_scale: float
    mode: str
    recall_1_at_100: float
    recall_100_at_1000: float | None
    qps: float
    latency_ms: dict = field(default_factory=dict)
    op_ratio_mean: float = float("nan")
    op_ratio_max: float = float("nan")
    sphere_tests_mean: float = 0.0
    lut_values_mean: float = 0.0
    accumulations_mean: float = 0.0


@dataclass
class BenchReport:
    rows: list
    entry_usage_mean: list = field(default_factory=list)
    entry_usage_max: list = field(default_factory=list)
    cdf: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows],
                "entry_usage_mean": list(map(float, self.entry_usage_mean)),
                "entry_usage_max": list(map(float, self.entry_usage_max)),
                "cdf": [list(map(float, c)) for c in self.cdf]}


def _parse_scale(v) -> float:
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "none", "no-prune", "noprune")):
        return NO_PRUNE
    return float(v)


def load_config(source) -> dict:
    """Parse a JSON config (path or dict) and validate its keys."""
    if isinstance(source, dict):
        cfg = dict(source)
        where = "<dict>"
    else:
        where = str(source)
        with open(source) as f:
            text = f.read()
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: top level must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS - OPTIONAL_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = {"base", "queries"} - set(cfg)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")
    try:
        cfg["metric"] = Metric.parse(cfg.get("metric", "l2"))
        cfg["modes"] = [Mode.parse(m) for m in cfg.get("modes", ["h"])]
        cfg["scale_list"] = [_parse_scale(s) for s in cfg.get("scale_list", [1.0])]
        cfg["nprobs_list"] = [int(n) for n in cfg.get("nprobs_list", [1])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    cfg.setdefault("clusters", 64)
    cfg.setdefault("entries", 64)
    cfg.setdefault("k", 100)
    cfg.setdefault("seed", 0)
    cfg.setdefault("threads", 1)
    cfg.setdefault("warmup", 3)
    cfg.setdefault("repeats", 10)
    cfg.setdefault("sample_n", 500)
    cfg.setdefault("reference", True)
    return cfg


def _as_dataset(value, metric):
    if isinstance(value, (str, os.PathLike)):
        return read_vecs(value, metric=metric)
    return value


def _timed(fn, warmup: int, repeats: int):
    for _ in range(warmup):
        fn()
    times, out = [], None
    for _ in range(max(repeats, 1)):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def _row(results, gt, nprobs, scale, mode, elapsed, k) -> BenchRow:
    nq = len(results)
    r1 = recall_1_at_k(results, gt, min(100, k))
    r100 = recall_a_at_b(results, gt, 100, 1000) if (k >= 1000 and gt.k >= 100) else None
    lat = {}
    if results and results[0].timings:
        for stage in ("filter_ns", "lut_ns", "distcalc_ns"):
            v = np.array([r.timings[stage] for r in results]) / 1e6
            lat[stage.replace("_ns", "")] = {"mean": float(v.mean()), "p50": float(np.percentile(v, 50)),
                                            "p99": float(np.percentile(v, 99))}
    row = BenchRow(nprobs, scale, mode, r1, r100, nq / elapsed if elapsed > 0 else float("inf"), lat)
    if results and "sphere_tests" in results[0].op_counts:
        oc = [r.op_counts for r in results]
        ratio = np.array([(o["sphere_tests"] + o["lut_values"]) / o["dense_lut_values"] for o in oc])
        row.op_ratio_mean = float(ratio.mean())
        row.op_ratio_max = float(ratio.max())
        row.sphere_tests_mean = float(np.mean([o["sphere_tests"] for o in oc]))
        row.lut_values_mean = float(np.mean([o["lut_values"] for o in oc]))
        row.accumulations_mean = float(np.mean([o["accumulations"] for o in oc]))
    return row


def run_bench(config, index: Index | None = None) -> BenchReport:
    """Build or load the index, make ground truth if needed, sweep the grid."""
    cfg = load_config(config)
    metric = cfg["metric"]
    queries = _as_dataset(cfg["queries"], metric)
    base = None
    if index is None:
        if cfg.get("index") and os.path.exists(cfg["index"]):
            index = load_index(cfg["index"])
        else:
            base = _as_dataset(cfg["base"], metric)
            index = build_index(base, cfg["clusters"], cfg["entries"], cfg["seed"], metric=metric,
                                sample_n=cfg["sample_n"])
            if cfg.get("index"):
                save_index(index, cfg["index"])
    gt_path = cfg.get("groundtruth")
    gt_k = max(100, min(cfg["k"], 1000))
    if isinstance(gt_path, NeighborTable):
        gt = gt_path
    elif gt_path and os.path.exists(str(gt_path).rsplit(".", 1)[0] + ".ivecs"):
        gt = read_groundtruth(gt_path)
    else:
        base = base if base is not None else _as_dataset(cfg["base"], metric)
        gt = brute_force_topk(base, queries, metric, min(gt_k, base.n))
        if gt_path:
            write_groundtruth(gt_path, gt)
    k = cfg["k"]
    rows = []
    for nprobs in cfg["nprobs_list"]:
        if cfg["reference"]:
            res, el = _timed(lambda: ivfpq_reference_search(queries, index, nprobs, k),
                             cfg["warmup"], cfg["repeats"])
            rows.append(_row(res, gt, nprobs, NO_PRUNE, "ref", el, k))
        for scale in cfg["scale_list"]:
            for mode in cfg["modes"]:
                params = SearchParams(nprobs, k, scale, mode)
                res, el = _timed(lambda: search_batch(queries, index, params, cfg["threads"]),
                                 cfg["warmup"], cfg["repeats"])
                rows.append(_row(res, gt, nprobs, scale, mode.value, el, k))
                log.info("nprobs=%d scale=%s mode=%s R1@100=%.4f", nprobs, scale, mode.value,
                         rows[-1].recall_1_at_100)
    report = BenchReport(rows)
    if gt.k >= 100:
        usage = profile_entry_usage(index, queries, gt)
        report.entry_usage_mean = usage.mean.tolist()
        report.entry_usage_max = usage.max.tolist()
        report.cdf = profile_locality_cdf(index, queries, gt).tolist()
    if cfg.get("out_dir"):
        write_report(report, cfg["out_dir"])
    return report


def write_report(report: BenchReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report.to_json(), f, indent=2, default=lambda v: None if v != v else v)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["nprobs", "thres_scale", "mode", "recall_1_at_100", "recall_100_at_1000", "qps",
                    "op_ratio_mean", "op_ratio_max", "filter_ms", "lut_ms", "distcalc_ms"])
        for r in report.rows:
            lat = r.latency_ms
            w.writerow([r.nprobs, r.thres_scale, r.mode, r.recall_1_at_100,
                        "" if r.recall_100_at_1000 is None else r.recall_100_at_1000, r.qps,
                        r.op_ratio_mean, r.op_ratio_max,
                        *(lat.get(s, {}).get("mean", "") for s in ("filter", "lut", "distcalc"))])
    if report.cdf:
        write_cdf_csv(os.path.join(out_dir, "cdf.csv"), np.asarray(report.cdf))
