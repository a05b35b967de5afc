"""Command line: build, groundtruth, search, bench, profile.

Exit status is 0 on success, 2 on a configuration error and 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .bench import (ConfigError, profile_entry_usage, profile_locality_cdf, run_bench,
                    write_cdf_csv, write_report, write_usage_csv)
from .dataset_io import NeighborTable, read_groundtruth, read_vecs, write_groundtruth
from .reference import brute_force_topk
from .search import SearchParams, results_to_arrays, search_batch
from .trainer import build_index, load_index, save_index

log = logging.getLogger("rtann")


def _scale(text: str) -> float:
    if text.lower() in ("inf", "none", "no-prune"):
        return float("inf")
    return float(text)


def cmd_build(args) -> int:
    base = read_vecs(args.base, metric=args.metric)
    index = build_index(base, args.clusters, args.entries, args.seed, metric=args.metric,
                        sample_n=args.sample_n)
    save_index(index, args.out)
    log.info("wrote %s (N=%d, D=%d, C=%d, E=%d)", args.out, index.n_points, index.d_orig,
             index.c, index.e)
    return 0


def cmd_groundtruth(args) -> int:
    base = read_vecs(args.base, metric=args.metric)
    queries = read_vecs(args.queries, metric=args.metric)
    gt = brute_force_topk(base, queries, args.metric, args.k)
    ids_path, _ = write_groundtruth(args.out, gt)
    log.info("wrote %s", ids_path)
    return 0


def cmd_search(args) -> int:
    index = load_index(args.index)
    queries = read_vecs(args.queries, metric=index.metric)
    params = SearchParams(args.nprobs, args.k, args.scale, args.mode)
    results = search_batch(queries, index, params, args.threads)
    ids, scores = results_to_arrays(results, args.k)
    write_groundtruth(args.out, NeighborTable(ids, scores))
    return 0


def cmd_bench(args) -> int:
    report = run_bench(args.config)
    if args.out_dir:
        write_report(report, args.out_dir)
    for r in report.rows:
        print(f"nprobs={r.nprobs:<4d} scale={r.thres_scale:<6g} mode={r.mode:<3s} "
              f"R1@100={r.recall_1_at_100:.4f} qps={r.qps:.1f} ops={r.op_ratio_mean:.3f}")
    return 0


def cmd_profile(args) -> int:
    index = load_index(args.index)
    queries = read_vecs(args.queries, metric=index.metric)
    gt = read_groundtruth(args.gt)
    os.makedirs(args.out_dir, exist_ok=True)
    usage = profile_entry_usage(index, queries, gt)
    cdf = profile_locality_cdf(index, queries, gt)
    write_usage_csv(os.path.join(args.out_dir, "usage.csv"), usage)
    np.savetxt(os.path.join(args.out_dir, "usage_frequency.csv"), usage.frequency, delimiter=",", fmt="%g")
    write_cdf_csv(os.path.join(args.out_dir, "cdf.csv"), cdf)
    with open(os.path.join(args.out_dir, "profile.json"), "w") as f:
        json.dump({"usage_mean": usage.mean.tolist(), "usage_max": usage.max.tolist()}, f, indent=2)
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtann", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="train an index from an fvecs/bvecs base file")
    b.add_argument("--base", required=True)
    b.add_argument("--metric", choices=["l2", "ip"], default="l2")
    b.add_argument("--clusters", type=int, required=True)
    b.add_argument("--entries", type=int, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--sample-n", type=int, default=500)
    b.set_defaults(func=cmd_build)

    g = sub.add_parser("groundtruth", help="exact top-k by brute force")
    g.add_argument("--base", required=True)
    g.add_argument("--queries", required=True)
    g.add_argument("--k", type=int, default=100)
    g.add_argument("--metric", choices=["l2", "ip"], default="l2")
    g.add_argument("--out", required=True, help="output prefix (.ivecs ids, .fvecs scores)")
    g.set_defaults(func=cmd_groundtruth)

    s = sub.add_parser("search", help="search a query file against an index")
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--k", type=int, default=100)
    s.add_argument("--nprobs", type=int, default=1)
    s.add_argument("--scale", type=_scale, default=1.0)
    s.add_argument("--mode", choices=["h", "m", "l"], default="h")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True, help="output prefix (.ivecs ids, .fvecs scores)")
    s.set_defaults(func=cmd_search)

    r = sub.add_parser("bench", help="run a parameter sweep from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_bench)

    f = sub.add_parser("profile", help="entry usage and locality CDF of the true top-100")
    f.add_argument("--index", required=True)
    f.add_argument("--queries", required=True)
    f.add_argument("--gt", required=True)
    f.add_argument("--out-dir", required=True)
    f.set_defaults(func=cmd_profile)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
