"""Per-subspace density maps and the density -> pruning-radius regressor.

Each subspace gets a 100x100 histogram of residual projections (density =
count / cell area). Sampled base points act as pseudo-queries: for each one we
take its exact full-dimension top-100 and record, per subspace, the largest
lateral distance between its projection and theirs. A low-degree polynomial
maps density to that radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topk import topk_rows

GRID = 100
BOX_PAD = 1e-9


@dataclass(frozen=True)
class DensityGrid:
    """Density histogram of one subspace. ``density[i, j]``: x-cell i, y-cell j."""

    density: np.ndarray
    bbox: tuple[float, float, float, float]  # min_x, min_y, max_x, max_y

    @property
    def grid(self) -> int:
        return self.density.shape[0]

    @property
    def cell_area(self) -> float:
        min_x, min_y, max_x, max_y = self.bbox
        g = self.grid
        return ((max_x - min_x) / g) * ((max_y - min_y) / g)

    def counts(self) -> np.ndarray:
        return self.density * self.cell_area

    def cell_index(self, xy) -> tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=np.float64)
        min_x, min_y, max_x, max_y = self.bbox
        g = self.grid
        i = np.floor((xy[..., 0] - min_x) / (max_x - min_x) * g)
        j = np.floor((xy[..., 1] - min_y) / (max_y - min_y) * g)
        i = np.clip(np.nan_to_num(i, nan=0.0, posinf=g - 1, neginf=0), 0, g - 1).astype(np.int64)
        j = np.clip(np.nan_to_num(j, nan=0.0, posinf=g - 1, neginf=0), 0, g - 1).astype(np.int64)
        return i, j


def build_density_map(residuals: np.ndarray, s: int, grid: int = GRID) -> DensityGrid:
    """Histogram the projections ``residuals[:, 2s:2s+2]`` onto a ``grid x grid`` map."""
    proj = np.asarray(residuals, dtype=np.float64)[:, 2 * s:2 * s + 2]
    if proj.shape[0] < 1:
        raise ValueError("need at least one projection")
    lo = proj.min(axis=0) - BOX_PAD
    hi = proj.max(axis=0) + BOX_PAD
    bbox = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
    empty = DensityGrid(np.zeros((grid, grid)), bbox)
    i, j = empty.cell_index(proj)
    counts = np.zeros((grid, grid))
    np.add.at(counts, (i, j), 1.0)
    return DensityGrid(counts / empty.cell_area, bbox)


def build_density_maps(residuals: np.ndarray, grid: int = GRID) -> list[DensityGrid]:
    n_sub = residuals.shape[1] // 2
    return [build_density_map(residuals, s, grid) for s in range(n_sub)]


def density_at(dmap: DensityGrid, point) -> np.ndarray | float:
    """Density of the cell containing ``point``; outside points clamp to the border."""
    i, j = dmap.cell_index(point)
    out = dmap.density[i, j]
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PolyModel:
    """Polynomial in a standardized input ``z = (x - shift) / scale``.

    ``coefficients`` reports the same polynomial in the raw input, lowest
    order first.
    """

    coef_z: np.ndarray
    shift: float
    scale: float
    t_min: float
    t_max: float

    @property
    def degree(self) -> int:
        return len(self.coef_z) - 1

    @property
    def coefficients(self) -> np.ndarray:
        # expand sum_j a_j ((x - m)/s)^j into powers of x
        deg = self.degree
        raw = np.zeros(deg + 1)
        basis = np.polynomial.Polynomial([-self.shift / self.scale, 1.0 / self.scale])
        acc = np.polynomial.Polynomial([0.0])
        term = np.polynomial.Polynomial([1.0])
        for a in self.coef_z:
            acc = acc + a * term
            term = term * basis
        raw[: len(acc.coef)] = acc.coef
        return raw

    def raw(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.shift) / self.scale
        out = np.zeros_like(z)
        for a in self.coef_z[::-1]:
            out = out * z + a
        return out


def fit_poly(xs, ys, degree: int = 3, ridge: float = 1e-9) -> PolyModel:
    """Least squares via ridge-stabilized normal equations.

    The input is standardized before building the Vandermonde matrix; raw
    densities span several orders of magnitude and the unscaled normal
    matrix would be numerically singular.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise ValueError("xs and ys differ in length")
    if xs.size < degree + 1:
        raise ValueError(f"need at least {degree + 1} samples for degree {degree}, got {xs.size}")
    shift = float(xs.mean())
    scale = float(xs.std())
    if not scale > 0:
        scale = 1.0
    z = (xs - shift) / scale
    V = np.vander(z, degree + 1, increasing=True)
    A = V.T @ V + ridge * np.eye(degree + 1)
    coef = np.linalg.solve(A, V.T @ ys)
    return PolyModel(coef, shift, scale, float(ys.min()), float(ys.max()))


def predict_threshold(model: PolyModel, density) -> np.ndarray | float:
    """Evaluate the polynomial and clamp into the training range."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = model.raw(density)
    out = np.where(np.isnan(out), model.t_max, out)
    out = np.clip(out, model.t_min, model.t_max)
    return float(out) if np.ndim(out) == 0 else out


def pseudo_query_neighbors(base: np.ndarray, rows: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Exact full-dimension top-``n_neighbors`` of each base row in ``rows``, itself excluded."""
    base = np.asarray(base, dtype=np.float64)
    if base.shape[0] < n_neighbors + 1:
        raise ValueError(f"need N >= {n_neighbors + 1} points, got {base.shape[0]}")
    norms = np.einsum("ij,ij->i", base, base)
    out = np.empty((len(rows), n_neighbors), dtype=np.int64)
    for start in range(0, len(rows), 256):
        chunk = rows[start:start + 256]
        q = base[chunk]
        dist = norms[None, :] - 2.0 * q @ base.T + norms[chunk][:, None]
        dist[np.arange(len(chunk)), chunk] = np.inf
        out[start:start + len(chunk)] = topk_rows(dist, n_neighbors)[0]
    return out


def lateral_distances(residuals: np.ndarray, row: int, neighbors: np.ndarray) -> np.ndarray:
    """``(len(neighbors), n_sub)`` lateral distances from ``row``'s projections."""
    n_sub = residuals.shape[1] // 2
    q = residuals[row].reshape(n_sub, 2)
    r = residuals[neighbors].reshape(len(neighbors), n_sub, 2)
    return np.sqrt(((r - q) ** 2).sum(axis=2))


def sample_training_pairs(base, residuals: np.ndarray, maps: list[DensityGrid],
                          sample_n: int, seed: int, n_neighbors: int = 100,
                          rows: np.ndarray | None = None):
    """Pseudo-query (density, threshold) pairs, each shaped ``(sample_n, n_sub)``.

    Returns ``(densities, thresholds, rows)`` where ``rows`` are the sampled
    base ids.
    """
    data = base.data if hasattr(base, "data") else np.asarray(base, dtype=np.float64)
    n = data.shape[0]
    if n < n_neighbors + 1:
        raise ValueError(f"need N >= {n_neighbors + 1} points, got {n}")
    if rows is None:
        if sample_n > n:
            raise ValueError(f"sample_n={sample_n} exceeds N={n}")
        rows = np.sort(np.random.default_rng(seed).choice(n, size=sample_n, replace=False))
    rows = np.asarray(rows, dtype=np.int64)
    n_sub = residuals.shape[1] // 2
    neigh = pseudo_query_neighbors(data, rows, n_neighbors)
    thresholds = np.empty((len(rows), n_sub))
    densities = np.empty((len(rows), n_sub))
    for i, row in enumerate(rows):
        thresholds[i] = lateral_distances(residuals, row, neigh[i]).max(axis=0)
        proj = residuals[row].reshape(n_sub, 2)
        for s in range(n_sub):
            densities[i, s] = density_at(maps[s], proj[s])
    return densities, thresholds, rows


def fit_threshold_models(densities: np.ndarray, thresholds: np.ndarray,
                         degree: int = 3) -> list[PolyModel]:
    """One regressor per subspace; densities are not comparable across subspaces."""
    return [fit_poly(densities[:, s], thresholds[:, s], degree) for s in range(densities.shape[1])]


def retention(residuals: np.ndarray, rows: np.ndarray, neighbors: np.ndarray,
              radii: np.ndarray) -> np.ndarray:
    """Fraction of each pseudo-query's neighbors whose projection lies strictly
    inside ``radii[i, s]``; returns ``(len(rows), n_sub)``."""
    out = np.empty(radii.shape)
    for i, row in enumerate(rows):
        lat = lateral_distances(residuals, row, neighbors[i])
        out[i] = (lat < radii[i][None, :]).mean(axis=0)
    return out
