import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtann import gen_synthetic
from rtann.threshold import (GRID, build_density_map, build_density_maps, density_at, fit_poly,
                             fit_threshold_models, lateral_distances, predict_threshold,
                             pseudo_query_neighbors, retention, sample_training_pairs)


def _spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    return np.corrcoef(ra, rb)[0, 1]


class TestDensityMap:
    def test_uniform_cell_centers(self):
        c = (np.arange(GRID) + 0.5) / GRID
        xx, yy = np.meshgrid(c, c, indexing="ij")
        res = np.stack([xx.ravel(), yy.ravel()], axis=1)
        dm = build_density_map(res, 0)
        assert np.all(dm.density == dm.density[0, 0]) and dm.density[0, 0] > 0
        np.testing.assert_allclose(dm.counts(), 1.0)

    def test_single_cell_mass(self):
        res = np.zeros((37, 2))
        dm = build_density_map(res, 0)
        nz = np.argwhere(dm.density > 0)
        assert len(nz) == 1
        np.testing.assert_allclose(dm.density[tuple(nz[0])], 37 / dm.cell_area)

    def test_mass_conservation(self):
        rng = np.random.default_rng(0)
        res = rng.normal(size=(5000, 6)) * [1, 2, 0.1, 5, 3, 3]
        for dm in build_density_maps(res):
            np.testing.assert_allclose(dm.counts().sum(), 5000, rtol=1e-9)
            assert np.all(dm.density >= 0)

    def test_max_edge_in_last_cell(self):
        res = np.array([[0.0, 0.0], [1.0, 1.0]])
        dm = build_density_map(res, 0)
        i, j = dm.cell_index(np.array([1.0, 1.0]))
        assert (int(i), int(j)) == (GRID - 1, GRID - 1)
        assert dm.bbox[0] == -1e-9 and dm.bbox[2] == 1.0 + 1e-9

    def test_subspace_selection(self):
        res = np.zeros((10, 4))
        res[:, 2] = np.arange(10)
        dm = build_density_map(res, 1)
        assert dm.bbox[0] < 0 and dm.bbox[2] > 9

    def test_density_at_center_and_outside(self):
        rng = np.random.default_rng(1)
        dm = build_density_map(rng.uniform(-1, 1, size=(3000, 2)), 0)
        cx = (dm.bbox[0] + dm.bbox[2]) / 2
        cy = (dm.bbox[1] + dm.bbox[3]) / 2
        assert density_at(dm, [cx, cy]) == dm.density[GRID // 2, GRID // 2]
        assert density_at(dm, [1e9, -1e9]) == dm.density[GRID - 1, 0]
        assert density_at(dm, [-1e9, -1e9]) == dm.density[0, 0]

    def test_density_at_matches_index_arithmetic(self):
        rng = np.random.default_rng(2)
        dm = build_density_map(rng.normal(size=(2000, 2)), 0)
        min_x, min_y, max_x, max_y = dm.bbox
        wx = (max_x - min_x) / GRID
        wy = (max_y - min_y) / GRID
        for p in rng.normal(scale=1.5, size=(100, 2)):
            i = min(max(int((p[0] - min_x) // wx), 0), GRID - 1)
            j = min(max(int((p[1] - min_y) // wy), 0), GRID - 1)
            assert density_at(dm, p) == dm.density[i, j]

    def test_needs_a_point(self):
        with pytest.raises(ValueError):
            build_density_map(np.zeros((0, 2)), 0)


class TestFitPoly:
    def test_exact_cubic(self):
        xs = np.linspace(0.1, 50.0, 40)
        want = np.array([0.7, -0.3, 0.02, -0.0004])
        ys = np.polynomial.polynomial.polyval(xs, want)
        m = fit_poly(xs, ys, 3)
        np.testing.assert_allclose(m.coefficients, want, rtol=1e-6)
        assert m.degree == 3

    def test_constant(self):
        m = fit_poly(np.linspace(0, 10, 20), np.full(20, 2.5), 3)
        np.testing.assert_allclose(m.coefficients, [2.5, 0, 0, 0], atol=1e-9)

    def test_noisy_beats_constant(self):
        rng = np.random.default_rng(3)
        xs = rng.uniform(0, 100, size=500)
        ys = 3.0 / (1 + 0.05 * xs) + rng.normal(scale=0.1, size=500)
        m = fit_poly(xs, ys, 3)
        mse = ((m.raw(xs) - ys) ** 2).mean()
        assert mse <= ys.var()

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_poly([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 3)

    def test_clamp_range(self):
        m = fit_poly(np.arange(10.0), np.arange(10.0) * 0.1 + 0.5, 1)
        assert (m.t_min, m.t_max) == (0.5, pytest.approx(1.4))


class TestPredict:
    def setup_method(self):
        xs = np.linspace(1.0, 20.0, 30)
        self.xs = xs
        self.ys = 0.1 + 0.05 * xs - 0.001 * xs ** 2
        self.m = fit_poly(xs, self.ys, 3)

    def test_training_point(self):
        np.testing.assert_allclose(predict_threshold(self.m, self.xs[7]), self.ys[7], rtol=1e-9)

    def test_infinite_inputs_clamp(self):
        lo, hi = self.m.t_min, self.m.t_max
        assert predict_threshold(self.m, np.inf) in (lo, hi)
        assert predict_threshold(self.m, -np.inf) in (lo, hi)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1e12, 1e12, allow_nan=False))
    def test_range(self, x):
        p = predict_threshold(self.m, x)
        assert self.m.t_min <= p <= self.m.t_max and np.isfinite(p)


class TestTrainingPairs:
    def test_coincident_neighbors_give_zero(self):
        base = np.zeros((101, 4))
        res = np.zeros((101, 4))
        maps = build_density_maps(res)
        dens, thr, rows = sample_training_pairs(base, res, maps, 1, seed=0, rows=np.array([0]))
        np.testing.assert_array_equal(thr, 0.0)
        assert dens.shape == (1, 2)

    def test_too_small(self):
        with pytest.raises(ValueError):
            sample_training_pairs(np.zeros((100, 4)), np.zeros((100, 4)), [], 1, 0)

    def test_sample_larger_than_n(self):
        base = np.random.default_rng(0).normal(size=(150, 4))
        with pytest.raises(ValueError):
            sample_training_pairs(base, base, build_density_maps(base), 151, 0)

    def test_neighbors_exclude_self_and_match_sort(self):
        rng = np.random.default_rng(4)
        base = rng.normal(size=(300, 5))
        rows = np.array([0, 17, 299])
        nb = pseudo_query_neighbors(base, rows, 100)
        for r, got in zip(rows, nb):
            d = ((base - base[r]) ** 2).sum(axis=1)
            d[r] = np.inf
            assert r not in got
            assert set(got.tolist()) == set(np.argsort(d, kind="stable")[:100].tolist())

    def test_thresholds_cover_neighbors(self, small_base):
        res = small_base.data - small_base.data.mean(axis=0)
        maps = build_density_maps(res)
        dens, thr, rows = sample_training_pairs(small_base, res, maps, 50, seed=1)
        assert np.all(thr >= 0)
        nb = pseudo_query_neighbors(small_base.data, rows, 100)
        for i, r in enumerate(rows):
            np.testing.assert_allclose(lateral_distances(res, r, nb[i]).max(axis=0), thr[i])
        # at scale 1 with the inclusive radius every neighbor is retained
        ret = retention(res, rows, nb, thr * (1 + 1e-12))
        np.testing.assert_array_equal(ret, 1.0)

    def test_density_threshold_negative_correlation(self):
        base = gen_synthetic(8000, 8, 30, 0.15, 5)
        res = base.data - base.data.mean(axis=0)
        maps = build_density_maps(res)
        dens, thr, _ = sample_training_pairs(base, res, maps, 400, seed=2)
        for s in range(4):
            assert _spearman(dens[:, s], thr[:, s]) < 0
        models = fit_threshold_models(dens, thr)
        assert len(models) == 4
        for s, m in enumerate(models):
            p = predict_threshold(m, dens[:, s])
            assert np.all(p > 0) and np.all(p >= thr[:, s].min()) and np.all(p <= thr[:, s].max())
