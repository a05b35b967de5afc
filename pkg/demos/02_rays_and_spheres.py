# How a codebook turns into spheres, and how a travel-time cap becomes a
# distance filter.
import numpy as np

from rtann.bvh import build_bvh, linear_scan_hits, traverse_all_hits, TraversalStats
from rtann.dataset_io import Metric
from rtann.scene import Ray, build_scene, t_hit_to_l2, threshold_to_tmax

rng = np.random.default_rng(0)
entries = rng.uniform(-1, 1, size=(2, 256, 2))  # 2 subspaces, 256 entries each
scene = build_scene(entries, Metric.L2, thresholds_max=[0.4, 0.4])
print("R per subspace", scene.R, "layer depths", scene.z)

bvh = build_bvh(scene, leaf_size=4)
print("BVH nodes %d, depth %d" % (bvh.n_nodes, bvh.depth()))

q = np.array([0.1, -0.2])
oz = scene.ray_origin_z()[0]

# full budget: every entry within R of the query projection is hit
full = traverse_all_hits(bvh, Ray(q[0], q[1], oz, scene.L[0]))
d = np.hypot(*(entries[0] - q).T)
print("hits with t_max = L:", len(full), " entries within R:", int((d < scene.R[0]).sum()))

# a shorter budget keeps only entries within threshold * scale
for scale in [1.0, 0.5, 0.25]:
    t_max = threshold_to_tmax(0.3, scale, scene.R[0], scene.L[0])
    stats = TraversalStats()
    hits = traverse_all_hits(bvh, Ray(q[0], q[1], oz, t_max), stats)
    dist = [t_hit_to_l2(h.t_hit, scene.R[0], scene.L[0]) for h in hits]
    print("scale %.2f t_max %.4f hits %3d  max distance %.3f  sphere tests %d" % (
        scale, t_max, len(hits), max(dist, default=0.0), stats.sphere_tests))

# the traversal agrees with testing every sphere
ray = Ray(q[0], q[1], oz, threshold_to_tmax(0.3, 1.0, scene.R[0], scene.L[0]))
a = sorted(h.sphere for h in traverse_all_hits(bvh, ray))
b = sorted(h.sphere for h in linear_scan_hits(scene, ray))
print("BVH == linear scan:", a == b)
