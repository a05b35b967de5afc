# Build an index on clustered synthetic data and compare the selective
# search against the dense IVFPQ pipeline and brute force.
import time

import numpy as np

from rtann import (Metric, SearchParams, brute_force_topk, build_index, gen_synthetic,
                   gen_synthetic_queries, ivfpq_reference_search, search_batch)
from rtann.bench import recall_1_at_k

base = gen_synthetic(20_000, 32, 64, 0.05, seed=1)
queries = gen_synthetic_queries(200, 32, 64, 0.05, seed=1, query_seed=2)
print("base", base.data.shape, "queries", queries.data.shape)

t0 = time.perf_counter()
index = build_index(base, clusters=64, entries=64, seed=1)
print("index built in %.1fs: C=%d E=%d subspaces=%d spheres=%d" % (
    time.perf_counter() - t0, index.c, index.e, index.n_sub, index.scene.n_spheres))

gt = brute_force_topk(base, queries, Metric.L2, 100)

# the dense reference evaluates every entry of every probed subspace
ref = ivfpq_reference_search(queries, index, 4, 100)
print("reference  R1@100 = %.3f" % recall_1_at_k(ref, gt, 100))

# the first search pays for JIT compilation
search_batch(queries.data[:2], index, SearchParams(4, 100))

for scale in [0.25, 0.5, 1.0, float("inf")]:
    t0 = time.perf_counter()
    res = search_batch(queries, index, SearchParams(nprobs=4, k=100, thres_scale=scale))
    el = time.perf_counter() - t0
    tested = np.mean([r.op_counts["sphere_tests"] for r in res])
    hits = np.mean([r.op_counts["lut_values"] for r in res])
    dense = res[0].op_counts["dense_lut_values"]
    print("scale %-5g R1@100 = %.3f  qps = %6.0f  sphere tests %6.1f  LUT values %6.1f  (dense %d)" % (
        scale, recall_1_at_k(res, gt, 100), len(res) / el, tested, hits, dense))
