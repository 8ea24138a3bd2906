import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import kendalltau

from mmdalert.core import AnomalyVerdict, MMDError, Priority
from mmdalert.rank import (FeedbackRecord, Features, RankWeights, extract_features, fit_weights, one_hot,
                           score)
from mmdalert.synthetic import gen_feedback

TRUE = RankWeights(2.0, (1.0, 0.0, 0.0, -1.0), 0.5)


def verdict(severity=3.0, anomaly=True, dims=(("country", "US"),)):
    return AnomalyVerdict("m", dims, "2024-01-01", 0, 1, 2, anomaly, severity, 1, 0, 1)


class TestFeatures:
    def test_granularity(self):
        assert extract_features(verdict(), "P1", {"Country": "US"}).f_g == 1
        assert extract_features(verdict(), "P1", {"Country": "US", "Device": "PC"}).f_g == 2
        assert extract_features(verdict(), "P1", {}).f_g == 0

    def test_priority_one_hot(self):
        f = extract_features(verdict(), Priority.P2, {})
        assert f.f_p.tolist() == [0, 1, 0, 0]
        for p in Priority:
            assert one_hot(p).sum() == 1 and one_hot(p)[p.value] == 1

    def test_severity_copied(self):
        assert extract_features(verdict(7.5), "P3", {}).f_d == 7.5

    def test_requires_anomaly(self):
        with pytest.raises(MMDError):
            extract_features(verdict(anomaly=False), "P1", {})


class TestScore:
    def test_worked_example(self):
        f = Features(10.0, one_hot("P1"), 2)
        assert score(f, RankWeights(1.0, (4, 3, 2, 1), 0.5)) == 15.0

    def test_zero_weights(self):
        assert score(Features(10.0, one_hot("P3"), 2), RankWeights(0, (0, 0, 0, 0), 0)) == 0.0

    feats = st.builds(lambda d, p, g: Features(d, one_hot(p), g),
                      st.floats(0, 100), st.integers(0, 3), st.integers(0, 5))
    weights = st.builds(lambda d, p, g: RankWeights(d, tuple(p), g), st.floats(-10, 10),
                        st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(-10, 10))

    @given(feats, weights, weights, st.floats(-5, 5), st.floats(-5, 5))
    def test_linear_in_weights(self, f, w1, w2, a, b):
        combo = RankWeights.from_vector(a * w1.as_vector() + b * w2.as_vector())
        assert score(f, combo) == pytest.approx(a * score(f, w1) + b * score(f, w2), abs=1e-7)

    @given(st.lists(feats, min_size=2, max_size=20), weights, st.floats(0.1, 100))
    def test_positive_scaling_preserves_ranking(self, fs, w, c):
        base = np.array([score(f, w) for f in fs])
        scaled = np.array([score(f, RankWeights.from_vector(c * w.as_vector())) for f in fs])
        np.testing.assert_allclose(scaled, c * base, rtol=1e-9, atol=1e-9)
        assert np.array_equal(np.argsort(np.round(base, 6), kind="stable"),
                              np.argsort(np.round(scaled / c, 6), kind="stable"))


class TestWeights:
    def test_validation_and_roundtrip(self):
        with pytest.raises(ValueError):
            RankWeights(1, (1, 2, 3), 1)
        with pytest.raises(ValueError):
            RankWeights(np.inf, (1, 2, 3, 4), 1)
        w = RankWeights(1.5, (4, 3, 2, 1), -0.5)
        assert RankWeights.from_dict(w.to_dict()) == w
        assert RankWeights.from_vector(w.as_vector()) == w


class TestFitWeights:
    def test_recovers_generating_weights(self):
        fb = gen_feedback(TRUE, 500, seed=0)
        fitted = fit_weights(fb, reg=0.01)
        true_v, fit_v = TRUE.as_vector(), fitted.as_vector()
        nonzero = true_v != 0  # a zero weight has no sign to recover
        assert np.array_equal(np.sign(fit_v[nonzero]), np.sign(true_v[nonzero]))
        X = np.array([r.as_vector() for r in fb])
        tau = kendalltau(X @ true_v, X @ fit_v)[0]
        assert tau >= 0.9

    def test_separable_data_stays_finite(self):
        fb = [FeedbackRecord(float(d), Priority.P1, 0, d > 5) for d in range(12)]
        w = fit_weights(fb, reg=0.1)
        assert np.all(np.isfinite(w.as_vector()))
        assert w.w_d > 0

    def test_order_free(self):
        fb = gen_feedback(TRUE, 100, seed=3)
        perm = [fb[i] for i in np.random.default_rng(0).permutation(len(fb))]
        np.testing.assert_allclose(fit_weights(fb).as_vector(), fit_weights(perm).as_vector(), atol=1e-9)

    def test_deterministic(self):
        fb = gen_feedback(TRUE, 60, seed=4)
        assert fit_weights(fb) == fit_weights(fb)

    def test_errors(self):
        fb = gen_feedback(TRUE, 60, seed=5)
        with pytest.raises(MMDError, match="at least 10"):
            fit_weights(fb[:9])
        with pytest.raises(MMDError, match="single class"):
            fit_weights([FeedbackRecord(1.0, Priority.P1, 0, True)] * 12)
        with pytest.raises(MMDError, match="non-finite"):
            fit_weights(fb[:11] + [FeedbackRecord(np.nan, Priority.P1, 0, False)])
        with pytest.raises(ValueError):
            fit_weights(fb, reg=-1)
