# Which codebook entries does the true top-100 actually use?
import numpy as np

from rtann import Metric, brute_force_topk, build_index, gen_synthetic, gen_synthetic_queries
from rtann.bench import profile_entry_usage, profile_locality_cdf

base = gen_synthetic(10_000, 32, 64, 0.05, seed=1)
queries = gen_synthetic_queries(100, 32, 64, 0.05, seed=1, query_seed=2)
index = build_index(base, 32, 64, seed=1)
gt = brute_force_topk(base, queries, Metric.L2, 100)

usage = profile_entry_usage(index, queries, gt)
print("usage ratio per subspace (mean):", np.round(usage.mean, 2))
print("usage ratio per subspace (max): ", np.round(usage.max, 2))

cdf = profile_locality_cdf(index, queries, gt)
half = index.e // 2
print("share of top-100 covered by the closest half of the entries:", np.round(cdf[:, half - 1], 3))
for frac in [0.1, 0.25, 0.5]:
    r = max(int(frac * index.e), 1)
    print("closest %3d%% of entries -> %.3f of the top-100" % (100 * frac, cdf[:, r - 1].mean()))
