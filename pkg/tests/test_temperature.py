import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from nedcal import MixtureSpec, SupportSet, TuneConfig, TuningError, generate_mixture, tune_temperature
from nedcal import metric_index
from nedcal.temperature import NeighborCache, golden_section, holdout_nll, loo_nll, write_nll_curve

from conftest import blobs


def loo_nll_brute(x, y, k, T):
    """Per-point loops: drop the point, sort the rest, weigh the k nearest."""
    total = 0.0
    n = len(y)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        d = sorted((float(np.sum((x[j] - x[i]) ** 2)), j) for j in others)[:k]
        w = [math.exp(-(dj - d[0][0]) / T) for dj, _ in d]
        p = sum(wi for wi, (_, j) in zip(w, d) if y[j] == y[i]) / sum(w)
        total -= math.log(max(p, 1e-12))
    return total / n


def loo_nll_dense(x, y, k, temps):
    """Vectorized LOO NLL over many temperatures, independent of the package."""
    d = cdist(x, x, "sqeuclidean")
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    dk = np.take_along_axis(d, order, axis=1)
    same = (y[order] == y[:, None])
    dk = dk - dk[:, :1]
    out = np.empty(len(temps))
    for t, T in enumerate(temps):
        w = np.exp(-dk / T)
        p = (w * same).sum(axis=1) / w.sum(axis=1)
        out[t] = -np.mean(np.log(np.maximum(p, 1e-12)))
    return out


def triangle_mixture(n=100, seed=3):
    means = 3.0 * np.array([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    spec = MixtureSpec(means, np.array([np.eye(2)] * 3), np.full(3, 1 / 3), seed)
    return generate_mixture(spec, n)


class TestLooNll:
    @pytest.mark.parametrize("T", [0.1, 1.0, 10.0])
    @pytest.mark.parametrize("k", [5, 39])
    def test_matches_brute_force(self, T, k):
        rng = np.random.default_rng(40)
        x = rng.normal(0, 1, (40, 2)) + np.repeat([[0, 0], [1.5, 0]], 20, axis=0)
        y = np.repeat([0, 1], 20)
        s = SupportSet.from_arrays(x, y)
        np.testing.assert_allclose(loo_nll(s, k, T), loo_nll_brute(x, y, k, T), rtol=1e-9)

    def test_separated_clusters_near_zero(self):
        s = blobs(n_per_class=15, n_classes=2, dim=2, spread=0.1, sep=50)
        assert loo_nll(s, 5, 1.0) < 1e-12

    def test_interleaved_is_log2(self):
        # evenly spaced on a circle, labels AABB...: both nearest neighbors
        # are equidistant and split one same-class, one other-class
        ang = 2 * np.pi * np.arange(40) / 40
        x = np.c_[np.cos(ang), np.sin(ang)]
        y = (np.arange(40) // 2) % 2
        s = SupportSet.from_arrays(x, y)
        np.testing.assert_allclose(loo_nll(s, 2, 1e6), math.log(2), rtol=1e-9)

    def test_single_record_class(self):
        s = SupportSet.from_arrays(np.arange(4.0)[:, None], [0, 1, 1, 1], ["lone", "many"])
        with pytest.raises(TuningError, match="'lone'.*holdout"):
            loo_nll(s, 2, 1.0)

    def test_k_too_large(self):
        s = blobs(n_per_class=3, n_classes=2)
        with pytest.raises(TuningError, match="N_support - 1"):
            loo_nll(s, 6, 1.0)

    @given(log_t=st.floats(-6, 6))
    def test_finite_across_scales(self, log_t):
        s = blobs(n_per_class=10, n_classes=3, spread=2.0, seed=1)
        v = loo_nll(s, 8, 10.0**log_t)
        assert np.isfinite(v) and v >= 0

    def test_permutation_invariant(self):
        s = triangle_mixture(30)
        t = s.subset(np.random.default_rng(0).permutation(len(s)))
        assert loo_nll(s, 10, 0.7) == pytest.approx(loo_nll(t, 10, 0.7), rel=1e-12)

    def test_holdout_nll(self):
        s = triangle_mixture(20)
        v = triangle_mixture(10, seed=8)
        cache = NeighborCache.against(s, v, 5)
        assert holdout_nll(s, v, 5, 0.9) == cache.nll(0.9)


class TestGoldenSection:
    def test_quadratic(self):
        path = golden_section(lambda u: (u - 0.3) ** 2, -1.0, 2.0, 40)
        best = min(path, key=lambda p: p[1])
        assert abs(best[0] - 0.3) < 1e-7
        assert len(path) == 41

    def test_zero_iterations(self):
        assert golden_section(lambda u: u, 0, 1, 0) == []

    def test_stays_in_bracket(self):
        path = golden_section(math.cos, 0.0, 1.0, 20)
        assert all(0.0 <= u <= 1.0 for u, _ in path)


class TestTune:
    def test_matches_dense_sweep(self):
        # with k close to the class size, far neighbors of other classes
        # penalize large T and the minimum is interior
        s = triangle_mixture()
        res = tune_temperature(s, TuneConfig(k=99))
        assert res.interior
        log_t = np.linspace(math.log(res.t_min), math.log(res.t_max), 10_000)
        dense = loo_nll_dense(s.vectors, s.labels, 99, np.exp(log_t))
        i = int(np.argmin(dense))
        step = log_t[1] - log_t[0]
        assert abs(math.log(res.t_star) - log_t[i]) <= max(res.refine_tolerance, step)
        assert res.nll_at_t_star <= dense[i] + 1e-12

    def test_scale_covariance(self):
        s = triangle_mixture()
        a = tune_temperature(s, TuneConfig(k=20))
        b = tune_temperature(s.with_vectors(2 * s.vectors).as_support(), TuneConfig(k=20))
        assert abs(math.log(b.t_star / (4 * a.t_star))) <= a.refine_tolerance

    def test_flat_curve_takes_lowest_t(self):
        # every neighbor list is single-class, so p_i = 1 and NLL = 0 for all T
        s = blobs(n_per_class=15, n_classes=2, dim=2, spread=0.1, sep=50)
        res = tune_temperature(s, TuneConfig(k=5))
        assert {v for _, v in res.nll_curve} == {0.0}
        assert res.t_star == res.t_min
        assert not res.interior

    def test_result_consistent(self):
        res = tune_temperature(triangle_mixture(40), TuneConfig(k=10))
        values = [v for _, v in res.nll_curve + res.refine_path]
        assert res.nll_at_t_star == min(values)
        assert all(res.t_min <= t <= res.t_max for t, _ in res.nll_curve + res.refine_path)
        assert len(res.nll_curve) == 32
        ts = [t for t, _ in res.nll_curve]
        assert ts == sorted(ts) and len(set(ts)) == 32

    def test_default_bracket(self):
        s = triangle_mixture(40)
        res = tune_temperature(s, TuneConfig(k=10))
        d2 = NeighborCache.leave_one_out(s, 1).mean_nn_distance
        np.testing.assert_allclose([res.t_min, res.t_max], [1e-3 * d2, 1e3 * d2], rtol=1e-12)

    def test_explicit_bracket(self):
        res = tune_temperature(triangle_mixture(40), TuneConfig(k=10, t_min=0.5, t_max=2.0))
        assert 0.5 <= res.t_star <= 2.0
        assert res.nll_curve[0][0] == 0.5 and res.nll_curve[-1][0] == 2.0

    def test_deterministic(self):
        s = triangle_mixture(40)
        cfg = TuneConfig(mode="holdout", k=10, fraction=0.2, seed=7)
        assert tune_temperature(s, cfg) == tune_temperature(s, cfg)

    def test_retrieves_neighbors_once(self, monkeypatch):
        calls = []
        original = metric_index.Index.query_batch

        def spy(self, *a, **kw):
            calls.append(1)
            return original(self, *a, **kw)

        monkeypatch.setattr(metric_index.Index, "query_batch", spy)
        tune_temperature(triangle_mixture(30), TuneConfig(k=10))
        assert len(calls) == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_holdout_agrees_with_loo_when_separated(self, seed):
        s = blobs(n_per_class=60, n_classes=3, dim=2, spread=1.0, seed=seed)
        a = tune_temperature(s, TuneConfig(k=10))
        b = tune_temperature(s, TuneConfig(mode="holdout", k=10, seed=seed))
        assert abs(math.log(a.t_star / b.t_star)) <= 2 * a.grid_step

    def test_holdout_single_record_class(self):
        s = SupportSet.from_arrays(np.arange(4.0)[:, None], [0, 1, 1, 1])
        with pytest.raises(TuningError):
            tune_temperature(s, TuneConfig(mode="holdout", k=1))

    def test_max_scored_subset(self):
        s = triangle_mixture(60)
        full = NeighborCache.leave_one_out(s, 10)
        part = NeighborCache.leave_one_out(s, 10, max_scored=50, seed=1)
        assert part.dist.shape == (50, 10)
        rows = [np.flatnonzero((full.dist == r).all(axis=1)) for r in part.dist]
        assert all(len(r) >= 1 for r in rows)

    @pytest.mark.parametrize("bad", [dict(mode="x"), dict(k=0), dict(grid_points=4),
                                     dict(t_min=-1.0), dict(t_min=2.0, t_max=1.0)])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            TuneConfig(**bad)

    def test_nll_curve_csv(self, tmp_path):
        res = tune_temperature(triangle_mixture(20), TuneConfig(k=5))
        p = tmp_path / "curve.csv"
        write_nll_curve(res, p)
        with open(p) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["T", "NLL"]
        assert [(float(a), float(b)) for a, b in rows[1:]] == res.nll_curve
