"""Offline index construction.

IVF k-means over the base set, residuals against each point's centroid,
one 2-d codebook per subspace trained on the residual projections, and the
inverted map ``(cluster, subspace, entry) -> point ids``. ``build_index``
also trains the threshold regressors and lays out the sphere scene and BVH.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import threshold as thr
from .bvh import Bvh, build_bvh
from .dataset_io import Dataset, Metric
from .scene import RADIUS_MARGIN, SphereScene, build_scene

log = logging.getLogger(__name__)

SUBSPACE_DIM = 2
IVF_ITERS = 25
CODEBOOK_ITERS = 25
MAGIC = b"JUNO1"


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distances via the expansion identity (used where ties don't matter)."""
    xx = np.einsum("ij,ij->i", x, x)
    cc = np.einsum("ij,ij->i", c, c)
    return np.maximum(xx[:, None] - 2.0 * x @ c.T + cc[None, :], 0.0)


def _assign(x: np.ndarray, c: np.ndarray, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(x.shape[0], dtype=np.int64)
    dist = np.empty(x.shape[0])
    for i in range(0, x.shape[0], chunk):
        d = _sq_dists(x[i:i + chunk], c)
        labels[i:i + chunk] = d.argmin(axis=1)
        dist[i:i + chunk] = d[np.arange(d.shape[0]), labels[i:i + chunk]]
    return labels, dist


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(n, p=closest / total)
        else:
            pick = rng.integers(n)
        centers[j] = x[pick]
        closest = np.minimum(closest, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _repair_empty(x, centers, labels, k):
    """Give every empty cluster the farthest point of the most populous cluster."""
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(((x[members] - centers[big]) ** 2).sum(axis=1))]
        labels[far] = j
        centers[j] = x[far]
        counts[big] -= 1
        counts[j] = 1


def _sse(x, centers, labels) -> float:
    return float(((x - centers[labels]) ** 2).sum())


def lloyd_kmeans(points, k: int, max_iters: int = IVF_ITERS, seed: int = 0,
                 sse_history: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding followed by Lloyd iterations.

    Stops at an assignment fixpoint or after ``max_iters`` updates. When
    ``sse_history`` is given, the objective after each update is appended.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    labels, _ = _assign(x, centers)
    _repair_empty(x, centers, labels, k)
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k)
                         for j in range(x.shape[1])], axis=1)
        centers = sums / counts[:, None]
        if sse_history is not None:
            sse_history.append(_sse(x, centers, labels))
        new, _ = _assign(x, centers)
        _repair_empty(x, centers, new, k)
        if np.array_equal(new, labels):
            break
        labels = new
    return centers, labels


@dataclass(frozen=True)
class IvfModel:
    centroids: np.ndarray
    labels: np.ndarray
    sq_norms: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sq_norms is None:
            object.__setattr__(self, "sq_norms", (self.centroids ** 2).sum(axis=1))

    @property
    def c(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray  # (n_sub, E, 2)

    @property
    def n_sub(self) -> int:
        return self.entries.shape[0]

    @property
    def e(self) -> int:
        return self.entries.shape[1]

    @property
    def m(self) -> int:
        return self.entries.shape[2]


def pad_dim(d: int) -> int:
    return d + (d % SUBSPACE_DIM)


def pad_vectors(x: np.ndarray, d_pad: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == d_pad:
        return x
    if x.shape[-1] != d_pad - 1 or d_pad % SUBSPACE_DIM:
        raise ValueError(f"dimension {x.shape[-1]} does not match index dimension {d_pad}")
    pad = np.zeros(x.shape[:-1] + (1,))
    return np.concatenate([x, pad], axis=-1)


def train_ivf(points, c: int, seed: int = 0, max_iters: int = IVF_ITERS) -> IvfModel:
    centroids, labels = lloyd_kmeans(points, c, max_iters, seed)
    return IvfModel(centroids, labels)


def compute_residuals(points, ivf: IvfModel) -> np.ndarray:
    x = points.data if isinstance(points, Dataset) else np.asarray(points, dtype=np.float64)
    if x.shape[0] != ivf.labels.shape[0] or x.shape[1] != ivf.centroids.shape[1]:
        raise ValueError(f"points {x.shape} do not match IVF model "
                         f"({ivf.labels.shape[0]} labels, dim {ivf.centroids.shape[1]})")
    return x - ivf.centroids[ivf.labels]


def train_codebooks(residuals: np.ndarray, m: int, e: int, seed: int = 0,
                    max_iters: int = CODEBOOK_ITERS) -> Codebook:
    if m != SUBSPACE_DIM:
        raise ValueError("only 2-d subspaces are supported")
    n, d = residuals.shape
    if d % m:
        raise ValueError(f"dimension {d} is not divisible by {m}; pad first")
    if e > n:
        raise ValueError(f"e={e} exceeds number of residuals {n}")
    n_sub = d // m
    entries = np.empty((n_sub, e, m))
    for s in range(n_sub):
        entries[s], _ = lloyd_kmeans(residuals[:, m * s:m * s + m], e, max_iters, seed + s)
    return Codebook(entries)


def assign_entry(residual_proj, codebook: Codebook, s: int) -> int:
    """Nearest entry of subspace ``s``; the lowest id wins ties."""
    if not 0 <= s < codebook.n_sub:
        raise ValueError(f"subspace {s} out of range")
    diff = codebook.entries[s] - np.asarray(residual_proj, dtype=np.float64)
    return int(np.argmin((diff * diff).sum(axis=1)))


def encode(residuals: np.ndarray, codebook: Codebook, chunk: int = 4096) -> np.ndarray:
    """Vectorized ``assign_entry`` for every point and subspace: ``(n, n_sub)``."""
    n = residuals.shape[0]
    codes = np.empty((n, codebook.n_sub), dtype=np.int64)
    for s in range(codebook.n_sub):
        ent = codebook.entries[s]
        proj = residuals[:, 2 * s:2 * s + 2]
        for i in range(0, n, chunk):
            diff = proj[i:i + chunk, None, :] - ent[None, :, :]
            codes[i:i + chunk, s] = np.argmin((diff * diff).sum(axis=2), axis=1)
    return codes


@dataclass(frozen=True)
class InvertedMap:
    """CSR lists keyed by ``(c * n_sub + s) * E + e``."""

    offsets: np.ndarray
    ids: np.ndarray
    c: int
    n_sub: int
    e: int

    def key(self, c: int, s: int, e: int) -> int:
        return (c * self.n_sub + s) * self.e + e

    def lists(self, c: int, s: int, e: int) -> np.ndarray:
        k = self.key(c, s, e)
        return self.ids[self.offsets[k]:self.offsets[k + 1]]

    def codes(self, n: int) -> np.ndarray:
        """Recover each point's entry per subspace."""
        codes = np.full((n, self.n_sub), -1, dtype=np.int64)
        keys = np.repeat(np.arange(len(self.offsets) - 1), np.diff(self.offsets))
        codes[self.ids, (keys // self.e) % self.n_sub] = keys % self.e
        return codes


def build_inverted_map(residuals: np.ndarray, ivf: IvfModel, codebook: Codebook,
                       codes: np.ndarray | None = None) -> InvertedMap:
    n = residuals.shape[0]
    if codes is None:
        codes = encode(residuals, codebook)
    n_sub, e, c = codebook.n_sub, codebook.e, ivf.c
    sub = np.arange(n_sub)
    keys = ((ivf.labels[:, None] * n_sub + sub[None, :]) * e + codes).T.ravel()
    pids = np.tile(np.arange(n), n_sub)
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=c * n_sub * e)
    offsets = np.zeros(c * n_sub * e + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return InvertedMap(offsets, pids[order].astype(np.int64), c, n_sub, e)


@dataclass
class Index:
    metric: Metric
    d_orig: int
    ivf: IvfModel
    codebook: Codebook
    inv: InvertedMap
    codes: np.ndarray
    scene: SphereScene
    density_maps: list = field(default_factory=list)
    models: list = field(default_factory=list)
    n_points: int = 0
    _bvh: Bvh | None = field(default=None, repr=False)
    _cluster_offsets: np.ndarray | None = field(default=None, repr=False)
    _cluster_ids: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.ivf.centroids.shape[1]

    @property
    def n_sub(self) -> int:
        return self.codebook.n_sub

    @property
    def e(self) -> int:
        return self.codebook.e

    @property
    def c(self) -> int:
        return self.ivf.c

    @property
    def bvh(self) -> Bvh:
        if self._bvh is None:
            self._bvh = build_bvh(self.scene)
        return self._bvh

    def cluster_members(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR ``(offsets, ids)`` of points per IVF cluster, ids ascending."""
        if self._cluster_offsets is None:
            labels = self.ivf.labels
            order = np.argsort(labels, kind="stable")
            offsets = np.zeros(self.c + 1, dtype=np.int64)
            np.cumsum(np.bincount(labels, minlength=self.c), out=offsets[1:])
            self._cluster_offsets, self._cluster_ids = offsets, order.astype(np.int64)
        return self._cluster_offsets, self._cluster_ids

    def pad(self, x) -> np.ndarray:
        return pad_vectors(x, self.d)

    def predict_thresholds(self, proj: np.ndarray) -> np.ndarray:
        """Thresholds for residual projections shaped ``(..., n_sub, 2)``."""
        out = np.empty(proj.shape[:-1])
        for s in range(self.n_sub):
            dens = thr.density_at(self.density_maps[s], proj[..., s, :])
            out[..., s] = thr.predict_threshold(self.models[s], dens)
        return out


def _ip_base_radius(data: np.ndarray, codebook: Codebook) -> np.ndarray:
    # large enough that every entry is hittable for queries no longer than the base points
    n_sub = codebook.n_sub
    proj_norm = np.sqrt((data.reshape(data.shape[0], n_sub, 2) ** 2).sum(axis=2)).max(axis=0)
    ent_norm = np.sqrt((codebook.entries ** 2).sum(axis=2)).max(axis=1)
    return np.maximum(proj_norm + ent_norm, 1e-12)


def build_index(base: Dataset, clusters: int, entries: int, seed: int = 0, *,
                metric=None, sample_n: int = 500, n_neighbors: int = 100,
                degree: int = 3, leaf_size: int = 4,
                margin: float = RADIUS_MARGIN) -> Index:
    metric = Metric.parse(metric if metric is not None else base.metric)
    d_orig = base.d
    data = pad_vectors(base.data, pad_dim(d_orig))
    log.info("training IVF: n=%d d=%d C=%d", data.shape[0], data.shape[1], clusters)
    ivf = train_ivf(data, clusters, seed)
    residuals = compute_residuals(data, ivf)
    log.info("training %d codebooks with E=%d", data.shape[1] // 2, entries)
    codebook = train_codebooks(residuals, SUBSPACE_DIM, entries, seed)
    codes = encode(residuals, codebook)
    inv = build_inverted_map(residuals, ivf, codebook, codes)
    maps = thr.build_density_maps(residuals)
    models = []
    if metric is Metric.L2:
        sample_n = min(sample_n, data.shape[0])
        dens, ths, _ = thr.sample_training_pairs(data, residuals, maps, sample_n, seed, n_neighbors)
        models = thr.fit_threshold_models(dens, ths, degree)
        thr_max = np.array([max(m.t_max, 1e-12) for m in models])
        scene = build_scene(codebook, metric, thr_max, margin)
    else:
        scene = build_scene(codebook, metric, _ip_base_radius(data, codebook), 1.0)
    index = Index(metric, d_orig, ivf, codebook, inv, codes, scene, maps, models, data.shape[0])
    index._bvh = build_bvh(scene, leaf_size)
    return index


# --- binary bundle -------------------------------------------------------

_METRIC_CODE = {Metric.L2: 0, Metric.INNER_PRODUCT: 1}


def _write_array(buf, arr, dtype):
    buf.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_array(buf, dtype, count, shape=None):
    dtype = np.dtype(dtype)
    raw = buf.read(dtype.itemsize * count)
    if len(raw) != dtype.itemsize * count:
        raise ValueError("index bundle is truncated")
    arr = np.frombuffer(raw, dtype=dtype, count=count).astype(dtype.newbyteorder("="))
    return arr.reshape(shape) if shape is not None else arr


def save_index(index: Index, path) -> None:
    """Write the little-endian ``JUNO1`` bundle. The BVH is rebuilt on load."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    n, d, c, e, n_sub = index.n_points, index.d, index.c, index.e, index.n_sub
    degree = index.models[0].degree if index.models else -1
    buf.write(struct.pack("<5q", n, d, c, e, n_sub))
    buf.write(struct.pack("<3q", _METRIC_CODE[index.metric], index.d_orig, degree))
    _write_array(buf, index.ivf.centroids, "<f8")
    _write_array(buf, index.ivf.labels, "<i8")
    _write_array(buf, index.codebook.entries, "<f8")
    _write_array(buf, index.inv.offsets, "<i8")
    _write_array(buf, index.inv.ids, "<i8")
    sc = index.scene
    _write_array(buf, np.stack([sc.R, sc.L, sc.z], axis=1), "<f8")
    for m in index.models:
        _write_array(buf, np.concatenate([m.coef_z, [m.shift, m.scale, m.t_min, m.t_max]]), "<f8")
    grid = index.density_maps[0].grid if index.density_maps else 0
    buf.write(struct.pack("<q", grid))
    for dm in index.density_maps:
        _write_array(buf, dm.bbox, "<f8")
        _write_array(buf, dm.density, "<f8")
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_index(path, leaf_size: int = 4) -> Index:
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    magic = buf.read(len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"unknown index magic {magic!r}")
    n, d, c, e, n_sub = struct.unpack("<5q", buf.read(40))
    metric_code, d_orig, degree = struct.unpack("<3q", buf.read(24))
    metric = {v: k for k, v in _METRIC_CODE.items()}[metric_code]
    centroids = _read_array(buf, "<f8", c * d, (c, d))
    labels = _read_array(buf, "<i8", n)
    entries = _read_array(buf, "<f8", n_sub * e * 2, (n_sub, e, 2))
    offsets = _read_array(buf, "<i8", c * n_sub * e + 1)
    ids = _read_array(buf, "<i8", int(offsets[-1]))
    consts = _read_array(buf, "<f8", n_sub * 3, (n_sub, 3))
    models = []
    if degree >= 0:
        for _ in range(n_sub):
            v = _read_array(buf, "<f8", degree + 5)
            models.append(thr.PolyModel(v[:degree + 1], *map(float, v[degree + 1:])))
    (grid,) = struct.unpack("<q", buf.read(8))
    maps = []
    for _ in range(n_sub if grid else 0):
        bbox = tuple(float(v) for v in _read_array(buf, "<f8", 4))
        maps.append(thr.DensityGrid(_read_array(buf, "<f8", grid * grid, (grid, grid)), bbox))
    ivf = IvfModel(centroids, labels)
    codebook = Codebook(entries)
    inv = InvertedMap(offsets, ids, c, n_sub, e)
    R, L = consts[:, 0], consts[:, 1]
    scene = build_scene(codebook, metric, R, 1.0)
    if not (np.allclose(scene.L, L, rtol=0, atol=0) and np.array_equal(scene.z, consts[:, 2])):
        raise ValueError("scene constants in bundle are inconsistent with the codebook")
    index = Index(metric, int(d_orig), ivf, codebook, inv, inv.codes(n), scene, maps, models, n)
    index._bvh = build_bvh(scene, leaf_size)
    return index
