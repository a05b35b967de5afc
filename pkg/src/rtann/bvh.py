"""Software stand-in for the RT core: a sphere BVH with all-hits traversal.

The tree is a binary median split on the widest axis of each node's box.
Traversal reports every sphere the ray enters within ``[0, t_max]``, in no
particular order, and counts nodes visited, sphere tests and hits. These
counters are the hardware-independent cost measure used by the benchmarks.

Besides its AABB, each node keeps the bounding box of its sphere centers and
its largest radius. For a +z ray, a sphere with center depth ``zc`` and
radius ``r`` can only be entered before ``t_max`` if its lateral distance
``d`` satisfies ``d^2 <= r^2 - (zc - z0 - t_max)^2``. The traversal uses that
bound to cull whole subtrees, which is what makes a shortened ``t_max`` cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .scene import Ray, SphereScene

NODES_VISITED, SPHERE_TESTS, HITS = 0, 1, 2


@dataclass
class TraversalStats:
    nodes_visited: int = 0
    sphere_tests: int = 0
    hits: int = 0

    def add(self, counters) -> None:
        self.nodes_visited += int(counters[NODES_VISITED])
        self.sphere_tests += int(counters[SPHERE_TESTS])
        self.hits += int(counters[HITS])

    def merge(self, other: "TraversalStats") -> "TraversalStats":
        return TraversalStats(self.nodes_visited + other.nodes_visited,
                              self.sphere_tests + other.sphere_tests,
                              self.hits + other.hits)


@dataclass(frozen=True)
class Hit:
    sphere: int
    t_hit: float
    s: int
    e: int


@dataclass
class Bvh:
    aabb: np.ndarray         # (n_nodes, 6): min x,y,z then max x,y,z
    center_box: np.ndarray   # (n_nodes, 6): same, over sphere centers
    rmax: np.ndarray         # (n_nodes,)
    left: np.ndarray         # child ids, -1 for leaves
    right: np.ndarray
    start: np.ndarray        # leaf range into sphere_order
    count: np.ndarray
    sphere_order: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    sub_ids: np.ndarray
    entry_ids: np.ndarray
    leaf_size: int
    stats: TraversalStats = field(default_factory=TraversalStats)

    @property
    def n_nodes(self) -> int:
        return self.aabb.shape[0]

    @property
    def n_spheres(self) -> int:
        return self.radii.shape[0]

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.left[node] >= 0:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return best

    def leaves(self):
        return np.flatnonzero(self.left < 0)

    def kernel_args(self):
        return (self.aabb, self.center_box, self.rmax, self.left, self.right,
                self.start, self.count, self.sphere_order, self.centers, self.radii)


def build_bvh(scene: SphereScene, leaf_size: int = 4) -> Bvh:
    """Median split on the widest axis of the node AABB, recursively."""
    if scene.n_spheres == 0:
        raise ValueError("cannot build a BVH over an empty scene")
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    centers = np.ascontiguousarray(scene.centers, dtype=np.float64)
    radii = np.ascontiguousarray(scene.radii, dtype=np.float64)
    lo = centers - radii[:, None]
    hi = centers + radii[:, None]

    aabb, cbox, rmax, left, right, start, count = [], [], [], [], [], [], []
    order = np.arange(scene.n_spheres)

    def new_node(idx, first):
        node = len(aabb)
        aabb.append(np.concatenate([lo[idx].min(axis=0), hi[idx].max(axis=0)]))
        cbox.append(np.concatenate([centers[idx].min(axis=0), centers[idx].max(axis=0)]))
        rmax.append(radii[idx].max())
        left.append(-1)
        right.append(-1)
        start.append(first)
        count.append(len(idx))
        return node

    # explicit stack; recursion depth would be fine, but this keeps node ids in preorder
    root = new_node(order, 0)
    stack = [(root, 0, scene.n_spheres)]
    while stack:
        node, first, stop = stack.pop()
        idx = order[first:stop]
        if len(idx) <= leaf_size:
            continue
        box = aabb[node]
        axis = int(np.argmax(box[3:] - box[:3]))
        idx = idx[np.argsort(centers[idx, axis], kind="stable")]
        order[first:stop] = idx
        mid = first + len(idx) // 2
        l_node = new_node(order[first:mid], first)
        r_node = new_node(order[mid:stop], mid)
        left[node], right[node] = l_node, r_node
        stack.append((r_node, mid, stop))
        stack.append((l_node, first, mid))

    left_a = np.asarray(left, dtype=np.int64)
    count_a = np.asarray(count, dtype=np.int64)
    count_a[left_a >= 0] = 0  # internal nodes own no spheres directly
    return Bvh(
        aabb=np.asarray(aabb), center_box=np.asarray(cbox), rmax=np.asarray(rmax),
        left=left_a, right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64), count=count_a,
        sphere_order=order.astype(np.int64), centers=centers, radii=radii,
        sub_ids=np.asarray(scene.sub_ids, dtype=np.int64),
        entry_ids=np.asarray(scene.entry_ids, dtype=np.int64),
        leaf_size=leaf_size,
    )


@numba.njit(cache=True, nogil=True)
def _entry_t(cx, cy, cz, r, ox, oy, oz, t_max):
    dx = cx - ox
    dy = cy - oy
    d2 = dx * dx + dy * dy
    r2 = r * r
    if not d2 < r2:
        return -1.0
    t = (cz - oz) - np.sqrt(r2 - d2)
    if t < 0.0 or t > t_max:
        return -1.0
    return t


def ray_sphere_entry_t(ray: Ray, center, radius) -> float | None:
    """Entry time of a +z ray into a sphere, or None when it misses.

    Tangent rays miss; the entry must fall in ``[0, ray.t_max]``.
    """
    t = _entry_t(float(center[0]), float(center[1]), float(center[2]), float(radius),
                 ray.x, ray.y, ray.z, ray.t_max)
    return None if t < 0.0 else t


def entry_t_many(centers, radii, ox, oy, oz, t_max) -> np.ndarray:
    """Vectorized entry times of one ray against many spheres; NaN for misses."""
    d2 = (centers[:, 0] - ox) ** 2 + (centers[:, 1] - oy) ** 2
    r2 = radii * radii
    with np.errstate(invalid="ignore"):
        t = (centers[:, 2] - oz) - np.sqrt(r2 - d2)
    ok = (d2 < r2) & (t >= 0.0) & (t <= t_max)
    return np.where(ok, t, np.nan)


@numba.njit(cache=True, nogil=True)
def _traverse(aabb, cbox, rmax, left, right, start, count, order, centers, radii,
              ox, oy, oz, t_max, out_idx, out_t, counters):
    """All hits of one ray; returns the number written (or -1 on overflow)."""
    n_out = 0
    cap = out_idx.shape[0]
    stack = np.empty(128, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    z_end = oz + t_max
    while top > 0:
        top -= 1
        node = stack[top]
        counters[0] += 1
        # slab test; the ray is the segment x=ox, y=oy, z in [oz, z_end]
        if ox < aabb[node, 0] or ox > aabb[node, 3] or oy < aabb[node, 1] or oy > aabb[node, 4]:
            continue
        if z_end < aabb[node, 2] or oz > aabb[node, 5]:
            continue
        # travel-time cull against the node's centers and largest radius
        if cbox[node, 5] < oz:
            continue
        h = cbox[node, 2] - oz - t_max
        if h > 0.0:
            # slack keeps the cull conservative under rounding
            room = rmax[node] * rmax[node] - h * h + 1e-12 * (rmax[node] * rmax[node] + h * h)
            if room <= 0.0:
                continue
            dx = 0.0
            if ox < cbox[node, 0]:
                dx = cbox[node, 0] - ox
            elif ox > cbox[node, 3]:
                dx = ox - cbox[node, 3]
            dy = 0.0
            if oy < cbox[node, 1]:
                dy = cbox[node, 1] - oy
            elif oy > cbox[node, 4]:
                dy = oy - cbox[node, 4]
            if dx * dx + dy * dy >= room:
                continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                sph = order[k]
                counters[1] += 1
                t = _entry_t(centers[sph, 0], centers[sph, 1], centers[sph, 2], radii[sph],
                             ox, oy, oz, t_max)
                if t >= 0.0:
                    if n_out >= cap:
                        return -1
                    out_idx[n_out] = sph
                    out_t[n_out] = t
                    n_out += 1
                    counters[2] += 1
        else:
            if top + 2 > stack.shape[0]:
                grown = np.empty(stack.shape[0] * 2, dtype=np.int64)
                grown[:top] = stack[:top]
                stack = grown
            stack[top] = right[node]
            top += 1
            stack[top] = left[node]
            top += 1
    return n_out


@numba.njit(cache=True, nogil=True)
def traverse_batch(aabb, cbox, rmax, left, right, start, count, order, centers, radii,
                   ox, oy, oz, t_max, out_idx, out_t, out_n, counters):
    """Trace many rays; hits of ray i land in ``out_idx[i, :out_n[i]]``.

    Rays with negative ``t_max`` are skipped. Returns False if any ray
    produced more hits than the output rows can hold.
    """
    ok = True
    for i in range(ox.shape[0]):
        if t_max[i] < 0.0:
            out_n[i] = 0
            continue
        n = _traverse(aabb, cbox, rmax, left, right, start, count, order, centers, radii,
                      ox[i], oy[i], oz[i], t_max[i], out_idx[i], out_t[i], counters)
        if n < 0:
            ok = False
            n = 0
        out_n[i] = n
    return ok


def traverse_all_hits(bvh: Bvh, ray: Ray, stats: TraversalStats | None = None) -> list[Hit]:
    """Every sphere the ray enters within its travel budget."""
    out_idx = np.empty(bvh.n_spheres, dtype=np.int64)
    out_t = np.empty(bvh.n_spheres, dtype=np.float64)
    counters = np.zeros(3, dtype=np.int64)
    n = _traverse(*bvh.kernel_args(), float(ray.x), float(ray.y), float(ray.z),
                  float(ray.t_max), out_idx, out_t, counters)
    bvh.stats.add(counters)
    if stats is not None:
        stats.add(counters)
    return [Hit(int(i), float(t), int(bvh.sub_ids[i]), int(bvh.entry_ids[i]))
            for i, t in zip(out_idx[:n], out_t[:n])]


def linear_scan_hits(scene_or_bvh, ray: Ray) -> list[Hit]:
    """Brute-force reference: test every sphere."""
    t = entry_t_many(scene_or_bvh.centers, scene_or_bvh.radii, ray.x, ray.y, ray.z, ray.t_max)
    idx = np.flatnonzero(~np.isnan(t))
    return [Hit(int(i), float(t[i]), int(scene_or_bvh.sub_ids[i]), int(scene_or_bvh.entry_ids[i]))
            for i in idx]
