"""Vector datasets: fvecs/bvecs/ivecs I/O, synthetic generators, ground truth files.

Record layout shared by the three formats: a little-endian int32 dimension
followed by that many elements (float32, uint8 or int32). Records are
concatenated with no header.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np

_ELEM_DTYPES = {
    "float32": np.dtype("<f4"),
    "uint8": np.dtype("u1"),
    "int32": np.dtype("<i4"),
}


class Metric(str, enum.Enum):
    L2 = "l2"
    INNER_PRODUCT = "ip"

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, Metric):
            return value
        v = str(value).lower()
        if v in ("l2", "euclidean"):
            return cls.L2
        if v in ("ip", "inner_product", "innerproduct", "dot"):
            return cls.INNER_PRODUCT
        raise ValueError(f"unknown metric {value!r}")


@dataclass(frozen=True)
class Dataset:
    """``n`` points of dimension ``d`` stored row-major as float64."""

    data: np.ndarray
    metric: Metric = Metric.L2

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {data.shape}")
        if data.shape[0] > 0 and data.shape[1] <= 0:
            raise ValueError("dimension must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError("dataset contains NaN or Inf")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "metric", Metric.parse(self.metric))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n

    def subset(self, rows) -> "Dataset":
        return Dataset(self.data[rows], self.metric)


@dataclass(frozen=True)
class NeighborTable:
    """Per-query neighbor ids and their scores, one row per query."""

    ids: np.ndarray
    scores: np.ndarray = field(default=None)

    def __post_init__(self):
        ids = np.atleast_2d(np.asarray(self.ids, dtype=np.int64))
        scores = self.scores
        if scores is None:
            scores = np.zeros(ids.shape, dtype=np.float64)
        scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
        if scores.shape != ids.shape:
            raise ValueError(f"ids {ids.shape} and scores {scores.shape} differ in shape")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)

    @property
    def q_count(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]


def _elem_dtype(elem: str) -> np.dtype:
    try:
        return _ELEM_DTYPES[elem]
    except KeyError:
        raise ValueError(f"elem must be one of {sorted(_ELEM_DTYPES)}, got {elem!r}") from None


def elem_for_path(path) -> str:
    """Guess the element kind from a file extension (.fvecs/.bvecs/.ivecs)."""
    ext = os.path.splitext(str(path))[1].lower()
    return {".fvecs": "float32", ".bvecs": "uint8", ".ivecs": "int32"}.get(ext, "float32")


def read_raw_vecs(path, elem: str) -> np.ndarray:
    """Read a vecs file into an ``(n, d)`` array of the file's element dtype."""
    dtype = _elem_dtype(elem)
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size < 4:
        raise ValueError(f"{path}: file too short to hold a record header")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise ValueError(f"{path}: non-positive dimension {d}")
    rec = 4 + d * dtype.itemsize
    if raw.size % rec:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of record size {rec} (truncated?)")
    recs = raw.reshape(-1, rec)
    dims = recs[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != d)
    if bad.size:
        raise ValueError(f"{path}: record {bad[0]} has dimension {dims[bad[0]]}, expected {d}")
    return recs[:, 4:].copy().view(dtype).reshape(-1, d)


def read_vecs(path, elem: str | None = None, metric=Metric.L2) -> Dataset:
    if elem is None:
        elem = elem_for_path(path)
    return Dataset(read_raw_vecs(path, elem).astype(np.float64), metric)


def _encode(values: np.ndarray, elem: str) -> np.ndarray:
    dtype = _elem_dtype(elem)
    values = np.asarray(values)
    if elem == "float32":
        if values.size and not np.all(np.isfinite(values)):
            raise ValueError("float32 output requires finite values")
        return values.astype(dtype)
    info = np.iinfo(dtype)
    if values.size:
        if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
            raise ValueError(f"{elem} output requires integer values")
        if values.min() < info.min or values.max() > info.max:
            raise ValueError(f"value out of range for {elem} [{info.min}, {info.max}]")
    return values.astype(dtype)


def write_raw_vecs(path, values: np.ndarray, elem: str) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("expected a 2-d array")
    body = _encode(values, elem)
    n, d = body.shape
    if n == 0:
        open(path, "wb").close()
        return
    header = np.full((n, 1), d, dtype="<i4").view(np.uint8)
    recs = np.hstack([header, body.reshape(n, d).view(np.uint8).reshape(n, -1)])
    recs.tofile(path)


def write_vecs(path, ds: Dataset | np.ndarray, elem: str | None = None) -> None:
    if elem is None:
        elem = elem_for_path(path)
    data = ds.data if isinstance(ds, Dataset) else np.asarray(ds)
    write_raw_vecs(path, data, elem)


def write_groundtruth(prefix, table: NeighborTable) -> tuple[str, str]:
    """Write ``<prefix>.ivecs`` (ids) and ``<prefix>.fvecs`` (scores)."""
    prefix = str(prefix)
    for ext in (".ivecs", ".fvecs"):
        if prefix.endswith(ext):
            prefix = prefix[: -len(ext)]
    ids_path, scores_path = prefix + ".ivecs", prefix + ".fvecs"
    write_raw_vecs(ids_path, table.ids, "int32")
    write_raw_vecs(scores_path, table.scores, "float32")
    return ids_path, scores_path


def read_groundtruth(path) -> NeighborTable:
    """Read ground truth ids, plus scores from the sibling .fvecs if present."""
    path = str(path)
    base = path[:-6] if path.endswith((".ivecs", ".fvecs")) else path
    ids = read_raw_vecs(base + ".ivecs", "int32").astype(np.int64)
    scores = None
    if os.path.exists(base + ".fvecs"):
        scores = read_raw_vecs(base + ".fvecs", "float32").astype(np.float64)
    return NeighborTable(ids, scores)


def _check_synthetic_args(n, d, n_clusters, spread):
    if n <= 0 or d <= 0 or n_clusters <= 0:
        raise ValueError("n, d and n_clusters must be positive")
    if n_clusters > n:
        raise ValueError(f"n_clusters={n_clusters} exceeds n={n}")
    if not spread > 0:
        raise ValueError("spread must be positive")


def gen_synthetic(n: int, d: int, n_clusters: int, spread: float, seed: int,
                  metric=Metric.L2) -> Dataset:
    """Gaussian blobs with centers uniform in the unit cube.

    Point ``i`` belongs to blob ``i % n_clusters``, so no blob is empty.
    """
    _check_synthetic_args(n, d, n_clusters, spread)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(n_clusters, d))
    blob = np.arange(n) % n_clusters
    data = centers[blob] + rng.normal(0.0, spread, size=(n, d))
    return Dataset(data, metric)


def gen_synthetic_queries(n_queries: int, d: int, n_clusters: int, spread: float,
                          seed: int, query_seed: int, metric=Metric.L2) -> Dataset:
    """Queries drawn from the same blobs ``gen_synthetic`` builds for ``seed``."""
    _check_synthetic_args(max(n_queries, n_clusters), d, n_clusters, spread)
    centers = np.random.default_rng(seed).uniform(0.0, 1.0, size=(n_clusters, d))
    rng = np.random.default_rng(query_seed)
    blob = rng.integers(0, n_clusters, size=n_queries)
    data = centers[blob] + rng.normal(0.0, spread, size=(n_queries, d))
    return Dataset(data, metric)
