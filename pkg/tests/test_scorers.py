import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nedcal import (
    EmbeddingError,
    Index,
    Rule,
    ScorerConfig,
    SupportSet,
    class_scores_batch,
    predict,
    predict_batch,
)
from nedcal.scorers import knn_scores, ned_scores, wknn_scores, wknn_weights

from conftest import blobs, random_set

# e^-0.01 / (e^-0.01 + e^-0.81) = 1 / (1 + e^-0.8), evaluated with math.exp
NED_EXAMPLE_B = 0.6899744811276125


def ned_reference(d, labels, T, n_classes):
    """Direct, unstabilized evaluation of the normalized kernel sum."""
    w = [math.exp(-di / T) for di in d]
    tot = sum(w)
    return np.array([sum(wi for wi, y in zip(w, labels) if y == j) / tot for j in range(n_classes)])


class TestNedScores:
    def test_single_neighbor(self):
        np.testing.assert_array_equal(ned_scores([3.7], [2], 0.5, 4), [0, 0, 1, 0])

    def test_two_neighbor_example(self):
        s = ned_scores([0.01, 0.81], [1, 0], 1.0, 2)
        np.testing.assert_allclose(s, [1 - NED_EXAMPLE_B, NED_EXAMPLE_B], rtol=1e-15)
        assert round(s[1], 3) == 0.690 and round(s[0], 3) == 0.310

    @pytest.mark.parametrize("a,b", [(1, 4), (3, 3), (5, 2)])
    def test_equidistant_is_vote_fraction(self, a, b):
        k = a + b
        s = ned_scores(np.full(k, 2.5), [0] * a + [1] * b, 0.3, 2)
        np.testing.assert_array_equal(s, [a / k, b / k])

    @given(d=arrays(np.float64, 6, elements=st.floats(0, 50)),
           labels=arrays(np.int64, 6, elements=st.integers(0, 2)),
           T=st.floats(0.5, 100))
    def test_matches_reference(self, d, labels, T):
        np.testing.assert_allclose(ned_scores(d, labels, T, 3), ned_reference(d, labels, T, 3),
                                   rtol=1e-12, atol=1e-15)

    def test_no_underflow(self):
        # unstabilized, every exp(-d/T) is 0
        s = ned_scores([1e4, 1e4 + 1, 1e4 + 2], [0, 1, 1], 1e-2, 2)
        assert np.isfinite(s).all()
        np.testing.assert_allclose(s, [1, 0], atol=1e-40)

    @given(d=arrays(np.float64, 5, elements=st.floats(0, 10), unique=True),
           T=st.floats(1e-2, 1e3))
    def test_monotone_weights(self, d, T):
        # one class per neighbor: scores are the normalized weights
        s = ned_scores(d, np.arange(5), T, 5)
        order = np.argsort(d)
        w = s[order]
        assert (np.diff(w) <= 0).all()
        # strictness holds while every weight exp(-(d - d_min)/T) is a normal float
        assume((d.max() - d.min()) / T < 700)
        gaps = np.diff(np.sort(d)) / T
        assert (np.diff(w)[gaps > 1e-9] < 0).all()


class TestKnn:
    def test_counts(self):
        np.testing.assert_allclose(knn_scores([0, 0, 0, 1, 1], 2), [0.6, 0.4])

    def test_k1(self):
        np.testing.assert_array_equal(knn_scores([2], 3), [0, 0, 1])

    def test_four_distinct(self):
        np.testing.assert_array_equal(knn_scores([0, 1, 2, 3], 4), [0.25] * 4)


class TestWknn:
    @pytest.mark.parametrize("variant", ["A", "B"])
    def test_equal_distances_reduce_to_knn(self, variant):
        labels = [0, 1, 1, 2]
        np.testing.assert_array_equal(wknn_scores([2.0] * 4, labels, variant, 3), knn_scores(labels, 3))

    def test_endpoint_weights(self):
        np.testing.assert_array_equal(wknn_weights(np.array([1.0, 3.0]), "A"), [[1, 0]])
        np.testing.assert_array_equal(wknn_scores([1.0, 3.0], [0, 1], "A", 2), [1, 0])

    def test_three_neighbor_example(self):
        np.testing.assert_allclose(wknn_weights(np.array([1.0, 2.0, 3.0]), "A"), [[1, 0.5, 0]])
        s = wknn_scores([1.0, 2.0, 3.0], [0, 1, 0], "A", 2)
        np.testing.assert_allclose(s, [1 / 1.5, 0.5 / 1.5], rtol=1e-15)
        assert (round(s[0], 3), round(s[1], 3)) == (0.667, 0.333)

    def test_variant_b_floor(self):
        # eps = 1/3: w = ((3 - d) + 2/3) / (4/3 * 2)
        w = wknn_weights(np.array([1.0, 2.0, 3.0]), "B")
        np.testing.assert_allclose(w, [[1.0, 0.625, 0.25]], rtol=1e-15)

    @given(d=arrays(np.float64, 7, elements=st.floats(0, 100)).map(np.sort))
    def test_weights_bounded_and_monotone(self, d):
        for v in ("A", "B"):
            w = wknn_weights(d, v)[0]
            assert ((w >= 0) & (w <= 1)).all()
            assert (np.diff(w) <= 1e-15).all()

    def test_batch_uses_euclidean_distance(self):
        # squared (1, 4, 9) -> raw (1, 2, 3)
        s = class_scores_batch("wknn-a", np.array([[1.0, 4.0, 9.0]]), np.array([[0, 1, 0]]), 2)
        np.testing.assert_allclose(s[0], [1 / 1.5, 0.5 / 1.5])


class TestPredict:
    def test_three_point_example(self, three_points):
        p = predict(Index(three_points), [0.9, 0.0], ScorerConfig("ned", k=2, temperature=1.0))
        assert p.label == 1
        assert p.confidence == pytest.approx(NED_EXAMPLE_B, rel=1e-14)

    def test_ned_k1_is_1nn(self):
        s = random_set(n=40)
        q = np.random.default_rng(5).standard_normal((30, 3))
        idx = Index(s)
        ned = predict_batch(idx, q, ScorerConfig("ned", k=1, temperature=0.7))
        one = predict_batch(idx, q, ScorerConfig("1nn"))
        assert [p.label for p in ned] == [p.label for p in one]
        assert all(p.confidence == 1.0 for p in ned)
        assert all(p.calibrated for p in ned) and not any(p.calibrated for p in one)

    def test_one_nn_forces_k1(self):
        assert ScorerConfig("1nn", k=7).k == 1

    def test_small_t_self_match(self):
        s = SupportSet.from_arrays(np.eye(3), [0, 1, 2])
        p = predict(Index(s), s.vectors[1], ScorerConfig("ned", k=3, temperature=1e-3))
        assert p.label == 1 and p.confidence > 1 - 1e-12

    def test_argmax_tie_lowest_class(self):
        s = SupportSet.from_arrays(np.array([[1.0], [-1.0]]), [1, 0])
        p = predict(Index(s), [0.0], ScorerConfig("knn", k=2))
        assert p.label == 0 and p.confidence == 0.5

    @pytest.mark.parametrize("bad", [dict(temperature=0.0), dict(k=0), dict(rule="nope")])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            ScorerConfig(**bad)

    def test_dimension_error(self, three_points):
        with pytest.raises(EmbeddingError, match="dimension"):
            predict_batch(Index(three_points), np.zeros((2, 5)), ScorerConfig())

    def test_metric_mismatch(self, three_points):
        with pytest.raises(ValueError, match="metric"):
            predict_batch(Index(three_points), np.zeros((1, 2)) + 1, ScorerConfig(metric="cosine"))


class TestBatch:
    def setup_method(self):
        self.s = blobs(n_per_class=40, n_classes=4, dim=5, spread=3.0)
        self.q = np.random.default_rng(9).normal(0, 5, (1000, 5))
        self.idx = Index(self.s)

    @pytest.mark.parametrize("rule", list(Rule))
    def test_serial_equals_concurrent(self, rule):
        cfg = ScorerConfig(rule, k=9, temperature=2.0)
        a = predict_batch(self.idx, self.q, cfg, threads=1)
        b = predict_batch(self.idx, self.q, cfg, threads=4, block=64)
        assert [(p.label, p.confidence) for p in a] == [(p.label, p.confidence) for p in b]
        np.testing.assert_array_equal(np.array([p.class_scores for p in a]),
                                      np.array([p.class_scores for p in b]))

    def test_singleton_and_concatenation(self):
        cfg = ScorerConfig("ned", k=5, temperature=1.5)
        one = predict_batch(self.idx, self.q[:1], cfg)[0]
        single = predict(self.idx, self.q[0], cfg)
        assert (one.label, one.confidence) == (single.label, single.confidence)
        whole = predict_batch(self.idx, self.q[:300], cfg)
        parts = predict_batch(self.idx, self.q[:120], cfg) + predict_batch(self.idx, self.q[120:300], cfg)
        assert [p.confidence for p in whole] == [p.confidence for p in parts]

    @pytest.mark.parametrize("rule", ["ned", "knn", "wknn-a", "wknn-b"])
    def test_normalized(self, rule):
        for p in predict_batch(self.idx, self.q[:200], ScorerConfig(rule, k=12, temperature=0.4)):
            assert abs(p.class_scores.sum() - 1) < 1e-9
            assert ((p.class_scores >= 0) & (p.class_scores <= 1)).all()
            assert p.confidence == p.class_scores.max()


class TestLimits:
    def setup_method(self):
        rng = np.random.default_rng(12)
        self.s = SupportSet.from_arrays(rng.standard_normal((300, 4)), rng.integers(0, 5, 300))
        self.q = rng.standard_normal((400, 4))
        self.idx, self.dist = Index(self.s).query_batch(self.q, 15)
        self.labels = self.s.labels[self.idx]
        self.dbar = float(self.dist.mean())

    def test_small_t_is_nearest_label(self):
        strict = self.dist[:, 0] < self.dist[:, 1]
        scores = class_scores_batch("ned", self.dist, self.labels, 5, 1e-6 * self.dbar)
        onehot = np.eye(5)[self.labels[:, 0]]
        np.testing.assert_allclose(scores[strict], onehot[strict], atol=1e-12)

    def test_large_t_is_vote_fraction(self):
        scores = class_scores_batch("ned", self.dist, self.labels, 5, 1e6 * self.dbar)
        votes = class_scores_batch("knn", self.dist, self.labels, 5)
        assert np.abs(scores - votes).max() < 1e-4

    @given(scale=st.floats(0.01, 100))
    def test_scale_covariance(self, scale):
        t = self.s.with_vectors(self.s.vectors * scale).as_support()
        a = predict_batch(Index(self.s), self.q[:50], ScorerConfig("ned", k=10, temperature=0.8))
        b = predict_batch(Index(t), self.q[:50] * scale,
                          ScorerConfig("ned", k=10, temperature=0.8 * scale**2))
        np.testing.assert_allclose(np.array([p.class_scores for p in a]),
                                   np.array([p.class_scores for p in b]), atol=1e-9)

    def test_permutation_invariance(self):
        perm = np.random.default_rng(1).permutation(len(self.s))
        t = self.s.subset(perm)
        cfg = ScorerConfig("ned", k=10, temperature=0.5)
        a = predict_batch(Index(self.s), self.q, cfg)
        b = predict_batch(Index(t), self.q, cfg)
        np.testing.assert_allclose(np.array([p.class_scores for p in a]),
                                   np.array([p.class_scores for p in b]), atol=1e-15)
