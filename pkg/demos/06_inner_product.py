# Maximum inner product search through grown spheres.
import numpy as np

from rtann import (Metric, SearchParams, brute_force_topk, build_index, gen_synthetic,
                   gen_synthetic_queries, ivfpq_reference_search, search_batch)
from rtann.bench import recall_1_at_k

base = gen_synthetic(5_000, 16, 20, 0.1, seed=4, metric=Metric.INNER_PRODUCT)
queries = gen_synthetic_queries(100, 16, 20, 0.1, seed=4, query_seed=5, metric=Metric.INNER_PRODUCT)
index = build_index(base, 20, 32, seed=0)
print("radius range per subspace:", np.round(index.scene.radii.reshape(index.n_sub, -1).min(1), 2),
      np.round(index.scene.radii.reshape(index.n_sub, -1).max(1), 2))

gt = brute_force_topk(base, queries, Metric.INNER_PRODUCT, 100)
ref = ivfpq_reference_search(queries, index, 4, 100)
sel = search_batch(queries, index, SearchParams(4, 100))
print("reference R1@100 %.3f   selective R1@100 %.3f" % (recall_1_at_k(ref, gt, 100), recall_1_at_k(sel, gt, 100)))
print("same ids as reference:", all(np.array_equal(a.ids, b.ids) for a, b in zip(ref, sel)))

# an inner-product floor shortens the rays
for floor in [None, 0.0, 0.3]:
    res = search_batch(queries, index, SearchParams(4, 100, ip_floor=floor))
    print("ip_floor %-5s LUT values per query %.1f" % (floor, np.mean([r.op_counts["lut_values"] for r in res])))
