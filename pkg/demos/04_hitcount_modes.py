# Exact accumulation against the two hit-count scores.
import numpy as np
from scipy.stats import spearmanr

from rtann import Metric, SearchParams, brute_force_topk, build_index, gen_synthetic, gen_synthetic_queries, search_batch
from rtann.bench import recall_1_at_k
from rtann.search import Mode, build_selective_lut, filter_clusters, score_hitcount

base = gen_synthetic(20_000, 32, 64, 0.05, seed=1)
queries = gen_synthetic_queries(200, 32, 64, 0.05, seed=1, query_seed=2)
index = build_index(base, 64, 64, seed=1)
gt = brute_force_topk(base, queries, Metric.L2, 100)

for mode in ["h", "m", "l"]:
    res = search_batch(queries, index, SearchParams(4, 100, 1.0, mode))
    print("mode %s  R1@100 = %.3f" % (mode, recall_1_at_k(res, gt, 100)))
res = search_batch(queries, index, SearchParams(4, 100, 1.0, "m", rerank=True))
print("mode m + rerank  R1@100 = %.3f" % recall_1_at_k(res, gt, 100))

# score vs true distance for the points of one probed cluster
q = queries.data[0]
probes = filter_clusters(q, index.ivf, Metric.L2, 1)
lut = build_selective_lut(q, probes, index, SearchParams(1, 100, 1.0, Mode.M))
ids, m_score, _ = score_hitcount(lut, index, probes, Mode.M)
_, l_score, _ = score_hitcount(lut, index, probes, Mode.L)
dist = ((base.data[ids] - q) ** 2).sum(axis=1)
print("%d candidates  Spearman M %.3f  L %.3f" % (len(ids), spearmanr(m_score, dist)[0], spearmanr(l_score, dist)[0]))
