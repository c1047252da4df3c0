import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_ipp import copod
from robust_ipp.exceptions import InvalidParameterError


def brute_skew(col):
    n = len(col)
    mean = sum(col) / n
    m3 = sum((v - mean) ** 3 for v in col) / n
    var = sum((v - mean) ** 2 for v in col) / (n - 1)
    return 0.0 if var == 0 else m3 / math.sqrt(var) ** 3


def brute_score(train, point):
    """Direct enumeration of the three COPOD channels."""
    train = [list(map(float, row)) for row in train]
    n = len(train)
    floor = 1.0 / (n + 1)
    left = right = skewed = 0.0
    for o in range(len(point)):
        col = [row[o] for row in train]
        fl = max(sum(1 for v in col if v <= point[o]) / n, floor)
        fr = max(sum(1 for v in col if v >= point[o]) / n, floor)
        left += -math.log(fl)
        right += -math.log(fr)
        skewed += -math.log(fl if brute_skew(col) < 0 else fr)
    return max(left, right, skewed)


@pytest.fixture
def small_model():
    return copod.fit_copod(np.array([[1.0], [2.0], [2.0], [5.0]]), 0.1)


class TestEcdf:
    def test_left_examples(self, small_model):
        assert copod.ecdf_left(small_model, 0, 0.5) == 0.0
        assert copod.ecdf_left(small_model, 0, 5.0) == 1.0
        assert copod.ecdf_left(small_model, 0, 2.0) == 0.75

    def test_right_examples(self, small_model):
        assert copod.ecdf_right(small_model, 0, 1.0) == 1.0
        assert copod.ecdf_right(small_model, 0, 5.5) == 0.0
        assert copod.ecdf_right(small_model, 0, 2.0) == 0.75

    def test_right_is_left_of_negated(self):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 6, size=(30, 1)).astype(float)
        m = copod.fit_copod(x)
        neg = copod.fit_copod(-x)
        for y in np.linspace(-1, 7, 33):
            assert copod.ecdf_right(m, 0, y) == copod.ecdf_left(neg, 0, -y)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.floats(-120, 120), st.floats(-120, 120))
    def test_monotone_and_complementary(self, values, a, b):
        m = copod.fit_copod(np.array(values)[:, None])
        lo, hi = min(a, b), max(a, b)
        assert copod.ecdf_left(m, 0, lo) <= copod.ecdf_left(m, 0, hi)
        assert copod.ecdf_right(m, 0, lo) >= copod.ecdf_right(m, 0, hi)
        if a not in values:
            assert copod.ecdf_left(m, 0, a) + copod.ecdf_right(m, 0, a) == pytest.approx(1.0, abs=1e-15)


class TestSkewness:
    def test_symmetric(self):
        assert copod.skewness([-1.0, 0.0, 1.0]) == 0.0

    def test_right_skewed_value(self):
        # mean 2.5, third moment 93.75, (n-1) std 5
        assert copod.skewness([0, 0, 0, 10]) == pytest.approx(0.75, abs=1e-12)
        assert copod.skewness([0, 0, 0, 10]) == pytest.approx(brute_skew([0, 0, 0, 10]), abs=1e-12)

    def test_odd_function(self):
        rng = np.random.default_rng(2)
        v = rng.exponential(size=25)
        assert copod.skewness(-v) == -copod.skewness(v)

    def test_symmetric_column_stays_zero_after_shift(self):
        col = np.array([0.0, 1.0, 1.0, 2.0, 5.0, 8.0, 9.0, 9.0, 10.0])
        for shift in (0.0, 17.3, -41.9, 1e3 / 7):
            assert copod.skewness(col + shift) == 0.0

    def test_constant_column(self):
        assert copod.skewness([3.0, 3.0, 3.0]) == 0.0
        m = copod.fit_copod(np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 5.0]]))
        assert m.degenerate_dims == (0,)
        # the constant value contributes -ln 1 on both tails
        assert copod.score(m, [3.0, 2.0]) == pytest.approx(copod.score(copod.fit_copod(np.array([[1.0], [2.0], [5.0]])), [2.0]))


class TestScore:
    def test_central_below_extreme(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 3))
        m = copod.fit_copod(X)
        central = copod.score(m, np.median(X, axis=0))
        assert central < copod.score(m, X.max(axis=0) + 1)
        assert central < 3 * math.log(2) + 0.3

    def test_beyond_support_is_maximal(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 3))
        m = copod.fit_copod(X)
        top = copod.score(m, X.max(axis=0) + 10)
        candidates = rng.normal(scale=3, size=(500, 3))
        assert np.all(copod.score_samples(m, candidates) <= top + 1e-12)
        assert top == pytest.approx(3 * math.log(51))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 3)) * [1, 3, 0.5]
        Q = rng.normal(size=(5, 3)) * 2
        m = copod.fit_copod(X)
        for q in Q:
            assert copod.score(m, q) == pytest.approx(brute_score(X, q), abs=1e-12)

    def test_score_nonnegative(self):
        rng = np.random.default_rng(6)
        m = copod.fit_copod(rng.normal(size=(30, 2)))
        assert np.all(copod.score_samples(m, rng.normal(size=(100, 2))) >= 0)

    def test_translation_invariance(self):
        rng = np.random.default_rng(7)
        X = rng.gamma(2.0, size=(40, 3))
        Q = rng.gamma(2.0, size=(10, 3))
        shift = np.array([0.0, 17.5, 0.0])
        a = copod.score_samples(copod.fit_copod(X), Q)
        b = copod.score_samples(copod.fit_copod(X + shift), Q + shift)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_duplication_invariance(self):
        rng = np.random.default_rng(8)
        X = rng.gamma(2.0, size=(40, 3))
        m1, m2 = copod.fit_copod(X), copod.fit_copod(np.vstack([X, X]))
        # queries inside the empirical support so the probability floor never binds
        Q = rng.uniform(X.min(0), X.max(0), size=(30, 3))
        np.testing.assert_allclose(copod.score_samples(m1, Q), copod.score_samples(m2, Q), atol=1e-12)
        np.testing.assert_array_equal(np.sign(m1.skewness), np.sign(m2.skewness))

    def test_threshold_is_training_quantile(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(80, 3))
        m = copod.fit_copod(X, 0.15)
        assert m.threshold == pytest.approx(np.quantile(copod.score_samples(m, X), 0.85))
        assert np.all(np.diff(m.sorted_train, axis=0) >= 0)

    @pytest.mark.parametrize("c", [0.0, 0.5, -0.1, 0.7])
    def test_bad_contamination(self, c):
        with pytest.raises(InvalidParameterError):
            copod.fit_copod(np.random.default_rng(0).normal(size=(10, 2)), c)


class TestDetect:
    def test_empty_batch(self):
        m = copod.fit_copod(np.random.default_rng(0).normal(size=(10, 3)))
        assert copod.detect(m, np.empty((0, 3))).shape == (0,)

    def test_training_batch_flag_count(self):
        rng = np.random.default_rng(10)
        for c in (0.05, 0.1, 0.2):
            X = rng.normal(size=(97, 3))
            m = copod.fit_copod(X, c)
            scores = copod.score_samples(m, X)
            flags = copod.detect(m, X)
            ties = int(np.sum(scores == m.threshold))
            assert flags.sum() <= math.ceil(c * len(X)) + ties

    def test_threshold_tie_is_inlier(self):
        m = copod.fit_copod(np.random.default_rng(1).normal(size=(20, 2)))
        m = copod.CopodModel(m.sorted_train, m.skewness, m.n_train, copod.score(m, [0.0, 0.0]), 0.1)
        assert not copod.detect(m, [[0.0, 0.0]])[0]

    def test_injected_spikes_are_caught(self):
        # smooth transect with 10% spikes of amplitude U[1,2] x (q95 - q05)
        rng = np.random.default_rng(2024)
        x = np.linspace(0, 10, 200)
        y = np.sin(x) + rng.normal(0, 0.05, 200)
        spread = np.subtract(*np.quantile(y, [0.95, 0.05]))
        idx = rng.choice(200, 20, replace=False)
        y[idx] += rng.choice([-1, 1], 20) * rng.uniform(1, 2, 20) * spread
        feats = y[:, None]
        m = copod.fit_copod(feats, 0.1)
        flags = copod.detect(m, feats)
        brute = np.array([brute_score(feats, p) for p in feats]) > m.threshold
        np.testing.assert_array_equal(flags, brute)
        assert flags[idx].mean() == 0.9


class TestEstimator:
    def test_pyod_style_attributes(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(100, 3))
        det = copod.COPOD(contamination=0.1).fit(X)
        assert det.labels_.sum() <= 10
        np.testing.assert_array_equal(det.predict(X), det.labels_)
        np.testing.assert_allclose(det.decision_function(X), det.decision_scores_)
        assert det.get_params() == {"contamination": 0.1}
        np.testing.assert_array_equal(copod.COPOD().fit_predict(X), det.labels_)
