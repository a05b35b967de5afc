"""Sphere scene for codebook entries and the travel-time conversions.

Entry ``e`` of subspace ``s`` becomes a sphere centered at
``(x_e, y_e, z_s)``. A query projection becomes a ray starting at
``(x_q, y_q, z_s - L_s)`` heading along +z, so a ray that passes at lateral
distance ``d`` from a sphere of radius ``R`` enters it at
``t_hit = L - sqrt(R^2 - d^2)``. Capping the travel time at ``t_max`` only
admits spheres with ``d < sqrt(R^2 - (L - t_max)^2)``, which is how the
per-query pruning radius is applied without touching the geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import Metric

RADIUS_MARGIN = 1.25
_Z_GAP = 0.01
_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class SphereScene:
    centers: np.ndarray    # (n, 3)
    radii: np.ndarray      # (n,)
    sub_ids: np.ndarray    # (n,)
    entry_ids: np.ndarray  # (n,)
    R: np.ndarray          # (n_sub,) base radius
    L: np.ndarray          # (n_sub,) ray standoff
    z: np.ndarray          # (n_sub,) center depth
    metric: Metric = Metric.L2

    @property
    def n_spheres(self) -> int:
        return self.radii.shape[0]

    @property
    def n_sub(self) -> int:
        return self.R.shape[0]

    @property
    def n_entries(self) -> int:
        return self.n_spheres // self.n_sub

    def max_radius(self) -> np.ndarray:
        return self.radii.reshape(self.n_sub, -1).max(axis=1)

    def ray_origin_z(self) -> np.ndarray:
        return self.z - self.L


@dataclass(frozen=True)
class Ray:
    x: float
    y: float
    z: float
    t_max: float
    query_id: int = 0
    s: int = 0
    c: int = 0

    @property
    def direction(self) -> tuple[float, float, float]:
        return (0.0, 0.0, 1.0)


def stack_depths(radius_max: np.ndarray, standoff: np.ndarray) -> np.ndarray:
    """Center depth per subspace so no ray can reach a neighboring layer."""
    n_sub = len(radius_max)
    z = np.empty(n_sub)
    z[0] = standoff[0]
    for s in range(n_sub - 1):
        step = radius_max[s] + standoff[s + 1]
        z[s + 1] = z[s] + step * (1.0 + _Z_GAP)
    return z


def build_scene(codebook, metric=Metric.L2, thresholds_max=None,
                margin: float = RADIUS_MARGIN) -> SphereScene:
    """Place one sphere per codebook entry.

    ``thresholds_max`` holds one value per subspace; the base radius is
    ``margin * thresholds_max[s]``. In inner-product mode each sphere's
    radius is grown to ``sqrt(R_s^2 + x_e^2 + y_e^2)``.
    """
    metric = Metric.parse(metric)
    entries = np.asarray(codebook.entries if hasattr(codebook, "entries") else codebook, dtype=np.float64)
    n_sub, n_e, _ = entries.shape
    thr = np.broadcast_to(np.asarray(thresholds_max, dtype=np.float64), (n_sub,)).copy()
    if not np.all(np.isfinite(thr)) or np.any(thr <= 0):
        raise ValueError("thresholds_max must be finite and positive")
    R = margin * thr
    if metric is Metric.L2:
        radii = np.repeat(R, n_e)
        L = R.copy()
    else:
        radii = np.sqrt(R[:, None] ** 2 + (entries ** 2).sum(axis=2)).ravel()
        L = radii.reshape(n_sub, n_e).max(axis=1)
    z = stack_depths(radii.reshape(n_sub, n_e).max(axis=1), L)
    centers = np.empty((n_sub * n_e, 3))
    centers[:, :2] = entries.reshape(-1, 2)
    centers[:, 2] = np.repeat(z, n_e)
    sub_ids = np.repeat(np.arange(n_sub), n_e)
    entry_ids = np.tile(np.arange(n_e), n_sub)
    return SphereScene(centers, radii, sub_ids, entry_ids, R, L, z, metric)


def _check_domain(ok, what):
    if not np.all(ok):
        raise ValueError(f"{what} outside the valid range")


def t_hit_to_l2(t_hit, R, L):
    """Lateral distance of a hit: ``sqrt(R^2 - (L - t_hit)^2)``."""
    t_hit = np.asarray(t_hit, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    tol = _DOMAIN_TOL * np.maximum(1.0, np.abs(L))
    _check_domain((t_hit >= L - R - tol) & (t_hit <= L + tol), "t_hit")
    out = np.sqrt(np.maximum(R * R - (L - t_hit) ** 2, 0.0))
    return float(out) if out.ndim == 0 else out


def t_hit_to_l2_sq(t_hit, R, L):
    """Squared lateral distance, without the domain check (hot path)."""
    return np.maximum(R * R - (L - t_hit) ** 2, 0.0)


def effective_radius(threshold, scale, R):
    """``min(threshold * scale, R)``; an infinite scale means no pruning."""
    threshold = np.asarray(threshold, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        r = threshold * scale
    r = np.where(np.isnan(r), 0.0, r)  # 0 * inf
    out = np.minimum(r, R)
    return float(out) if out.ndim == 0 else out


def threshold_to_tmax(threshold, scale, R, L):
    """Travel-time cap that admits exactly the entries within ``threshold * scale``."""
    r_eff = effective_radius(threshold, scale, R)
    R = np.asarray(R, dtype=np.float64)
    out = np.clip(L - np.sqrt(np.maximum(R * R - np.asarray(r_eff) ** 2, 0.0)), 0.0, L)
    return float(out) if np.ndim(out) == 0 else out


def t_hit_to_ip(t_hit, q_norm2, R, L):
    """Inner product of query and entry projections from the hit time.

    Valid for spheres grown to ``sqrt(R^2 + |e|^2)``.
    """
    out = (np.asarray(q_norm2, dtype=np.float64) - np.asarray(R) ** 2 + (np.asarray(L) - t_hit) ** 2) / 2.0
    return float(out) if np.ndim(out) == 0 else out


def ip_floor_to_tmax(ip_floor, q_norm2, R, L):
    """Travel-time cap keeping only hits whose inner product is at least ``ip_floor``."""
    with np.errstate(invalid="ignore"):
        inner = np.asarray(R, dtype=np.float64) ** 2 - q_norm2 + 2.0 * np.asarray(ip_floor, dtype=np.float64)
    out = np.clip(L - np.sqrt(np.maximum(inner, 0.0)), 0.0, L)
    return float(out) if np.ndim(out) == 0 else out


def ray_arrays(query, probe_centroids, thresholds, scale, scene: SphereScene, ip_floor=None):
    """Vectorized ray construction.

    Returns ``(ox, oy, oz, t_max, r_eff)``, each shaped ``(nprobs, n_sub)``.
    ``r_eff`` is the effective pruning radius (L2) and NaN in inner-product
    mode. A ray whose ``t_max`` is negative is disabled.
    """
    query = np.asarray(query, dtype=np.float64)
    cents = np.atleast_2d(np.asarray(probe_centroids, dtype=np.float64))
    n_sub = scene.n_sub
    if query.shape[-1] != 2 * n_sub or cents.shape[1] != 2 * n_sub:
        raise ValueError(f"expected vectors of dimension {2 * n_sub}")
    nprobs = cents.shape[0]
    oz = np.broadcast_to(scene.ray_origin_z(), (nprobs, n_sub)).copy()
    if scene.metric is Metric.L2:
        proj = (query[None, :] - cents).reshape(nprobs, n_sub, 2)
        thr = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), (nprobs, n_sub))
        r_eff = effective_radius(thr, scale, scene.R[None, :])
        t_max = threshold_to_tmax(thr, scale, scene.R[None, :], scene.L[None, :])
        t_max = np.where(r_eff > 0, t_max, -1.0)
    else:
        proj = np.broadcast_to(query.reshape(1, n_sub, 2), (nprobs, n_sub, 2))
        r_eff = np.full((nprobs, n_sub), np.nan)
        if ip_floor is None:
            t_max = np.broadcast_to(scene.L, (nprobs, n_sub)).copy()
        else:
            qn2 = (query.reshape(n_sub, 2) ** 2).sum(axis=1)
            t_max = np.broadcast_to(ip_floor_to_tmax(ip_floor, qn2, scene.R, scene.L), (nprobs, n_sub)).copy()
    return proj[..., 0].copy(), proj[..., 1].copy(), oz, t_max, np.asarray(r_eff)


def make_rays(query, probe_centroids, thresholds, scale, scene: SphereScene,
              probe_ids=None, query_id: int = 0, ip_floor=None) -> list[Ray]:
    """One ray per (probe cluster, subspace), probe-major."""
    ox, oy, oz, t_max, _ = ray_arrays(query, probe_centroids, thresholds, scale, scene, ip_floor)
    nprobs, n_sub = ox.shape
    if probe_ids is None:
        probe_ids = range(nprobs)
    rays = []
    for p, c in enumerate(probe_ids):
        for s in range(n_sub):
            rays.append(Ray(float(ox[p, s]), float(oy[p, s]), float(oz[p, s]),
                            float(max(t_max[p, s], 0.0)), query_id, s, int(c)))
    return rays
