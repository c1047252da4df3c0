import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_ipp import gp
from robust_ipp.exceptions import InvalidParameterError, NumericalFailure
from robust_ipp.gp import Dataset, Hyperparams


def dense_oracle(X, y, Q, hp, jitter=gp.JITTER_START):
    """Prediction and LML via an explicit inverse and determinant, with scalar kernel loops."""
    n = len(X)
    K = np.array([[gp.kernel(X[i], X[j], hp) for j in range(n)] for i in range(n)])
    Ky = K + (hp.noise_std**2 + jitter) * np.eye(n)
    Kinv = np.linalg.inv(Ky)
    Ks = np.array([[gp.kernel(X[i], q, hp) for q in Q] for i in range(n)])
    mean = Ks.T @ Kinv @ y
    var = hp.amplitude**2 - np.diag(Ks.T @ Kinv @ Ks)
    sign, logdet = np.linalg.slogdet(Ky)
    assert sign > 0
    lml = -0.5 * (y @ Kinv @ y + logdet + n * math.log(2 * math.pi))
    return mean, np.sqrt(np.maximum(var, 0)), lml


def random_problem(rng, n=None):
    n = n or int(rng.integers(1, 21))
    X = rng.uniform(-1, 1, size=(n, 2))
    y = np.sin(2 * X[:, 0]) + X[:, 1] + rng.normal(0, 0.1, n)
    hp = Hyperparams(rng.uniform(0.5, 2.0), tuple(rng.uniform(0.2, 1.5, 2)), rng.uniform(0.05, 0.5))
    return Dataset(X, y), hp


def finite_difference_grad(data, hp, step=1e-5):
    theta = hp.to_log_vector()
    out = np.empty_like(theta)
    for k in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[k] += step
        down[k] -= step
        out[k] = (
            gp.log_marginal_likelihood(data, Hyperparams.from_log_vector(up))
            - gp.log_marginal_likelihood(data, Hyperparams.from_log_vector(down))
        ) / (2 * step)
    return out


class TestKernel:
    def test_zero_distance_gives_amplitude_squared(self):
        hp = Hyperparams(2.0, (0.3, 7.0), 0.1)
        assert gp.kernel([0.4, -1.0], [0.4, -1.0], hp) == 4.0

    def test_unit_offset(self):
        hp = Hyperparams(1.0, (1.0, 1.0), 0.1)
        assert gp.kernel([1, 0], [0, 0], hp) == pytest.approx(0.6065306597126334, rel=1e-12)

    def test_anisotropic_value(self):
        # exponent -0.5 * (2^2/2^2 + 1^2/0.5^2) = -2.5, times 1.5^2
        hp = Hyperparams(1.5, (2.0, 0.5), 0.1)
        assert gp.kernel([1, 2], [3, 1], hp) == pytest.approx(0.1846912469037723, rel=1e-12)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(3)
        A, B = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
        hp = Hyperparams(1.3, (0.7, 1.9), 0.1)
        K = gp.kernel_matrix(A, B, hp)
        ref = [[gp.kernel(a, b, hp) for b in B] for a in A]
        np.testing.assert_allclose(K, ref, rtol=1e-12)

    @pytest.mark.parametrize("bad", [
        dict(amplitude=0.0, lengthscales=(1, 1), noise_std=0.1),
        dict(amplitude=1.0, lengthscales=(1, -1), noise_std=0.1),
        dict(amplitude=1.0, lengthscales=(1, 1), noise_std=0.0),
        dict(amplitude=np.nan, lengthscales=(1, 1), noise_std=0.1),
    ])
    def test_invalid_hyperparameters(self, bad):
        with pytest.raises(InvalidParameterError):
            Hyperparams(**bad)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=2, max_size=2),
        st.lists(st.floats(-50, 50), min_size=2, max_size=2),
        st.floats(0.1, 5), st.floats(0.05, 5), st.floats(0.05, 5),
    )
    def test_symmetry_and_bound(self, a, b, amp, l1, l2):
        hp = Hyperparams(amp, (l1, l2), 0.1)
        kab = gp.kernel(a, b, hp)
        assert kab == gp.kernel(b, a, hp)
        assert 0 <= kab <= gp.kernel(a, a, hp) == pytest.approx(amp**2)


class TestPrediction:
    def test_prior(self):
        hp = Hyperparams(1.7, (0.5, 0.5), 0.1)
        mean, std = gp.predict_prior(hp, np.zeros((4, 2)))
        np.testing.assert_array_equal(mean, 0.0)
        np.testing.assert_array_equal(std, 1.7)

    def test_noise_free_interpolation(self):
        hp = Hyperparams(1.0, (0.5, 0.5), 1e-9)
        model = gp.fit(Dataset([[0.2, -0.3]], [1.25]), hp)
        mean, std = gp.predict(model, [[0.2, -0.3]])
        assert mean[0] == pytest.approx(1.25, abs=1e-6)
        assert std[0] < 1e-3

    def test_five_points_against_dense_inverse(self):
        rng = np.random.default_rng(11)
        data, hp = random_problem(rng, n=5)
        Q = rng.uniform(-1, 1, size=(3, 2))
        mean, std = gp.predict(gp.fit(data, hp), Q)
        ref_mean, ref_std, _ = dense_oracle(data.inputs, data.targets, Q, hp)
        np.testing.assert_allclose(mean, ref_mean, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(std, ref_std, rtol=1e-8, atol=1e-12)

    def test_factor_invariants(self):
        rng = np.random.default_rng(2)
        data, hp = random_problem(rng, n=15)
        model = gp.fit(data, hp)
        Ky = gp.kernel_matrix(data.inputs, data.inputs, hp) + (hp.noise_std**2 + model.jitter) * np.eye(15)
        L = model.chol_factor
        assert np.linalg.norm(L @ L.T - Ky) / np.linalg.norm(Ky) < 1e-8
        assert np.linalg.norm(Ky @ model.alpha_vector - data.targets) / np.linalg.norm(data.targets) < 1e-8
        np.testing.assert_array_equal(L, np.tril(L))

    def test_std_bounded_by_amplitude(self):
        rng = np.random.default_rng(5)
        data, hp = random_problem(rng, n=12)
        _, std = gp.predict(gp.fit(data, hp), rng.uniform(-3, 3, size=(200, 2)))
        assert np.all(std >= 0)
        assert np.all(std <= hp.amplitude + 1e-12)

    def test_unclamped_variance_not_meaningfully_negative(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-1, 1, size=(20, 2))
        hp = Hyperparams(1.0, (0.5, 0.5), 1e-4)
        model = gp.fit(Dataset(X, rng.normal(size=20)), hp)
        from scipy.linalg import solve_triangular
        v = solve_triangular(model.chol_factor, gp.kernel_matrix(X, X, hp), lower=True)
        assert np.min(1.0 - np.sum(v**2, axis=0)) >= -1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-5, 5))
    def test_variance_shrinkage(self, seed, new_target):
        rng = np.random.default_rng(seed)
        data, hp = random_problem(rng, n=int(rng.integers(1, 10)))
        q = rng.uniform(-1.5, 1.5, size=(1, 2))
        _, before = gp.predict(gp.fit(data, hp), q)
        more = Dataset(np.vstack([data.inputs, q]), np.append(data.targets, new_target))
        _, after = gp.predict(gp.fit(more, hp), q)
        assert after[0] <= before[0] + 1e-10

    def test_jitter_escalation_and_failure(self):
        # coincident points at a huge amplitude: rounding swamps the first rungs
        hp = Hyperparams(1e6, (1.0, 1.0), 1e-12)
        model = gp.fit(Dataset(np.zeros((3, 2)), [1.0, 1.0, 1.0]), hp)
        assert model.jitter in gp.JITTER_LADDER
        assert model.jitter > gp.JITTER_START
        # negative squared distances give an indefinite "covariance"
        sq = np.full((2, 2, 2), -10.0)
        sq[:, [0, 1], [0, 1]] = 0.0
        with pytest.raises(NumericalFailure) as info:
            gp._factorize(np.zeros((2, 2)), Hyperparams(1.0, (1.0, 1.0), 1e-3), sq_diffs=sq)
        assert info.value.jitter == pytest.approx(gp.JITTER_MAX)


class TestMarginalLikelihood:
    def test_scalar_case(self):
        hp = Hyperparams(1.4, (0.5, 0.5), 0.3)
        val = gp.log_marginal_likelihood(Dataset([[0.0, 0.0]], [0.0]), hp)
        expected = -0.5 * (math.log(1.4**2 + 0.3**2 + gp.JITTER_START) + math.log(2 * math.pi))
        assert val == pytest.approx(expected, rel=1e-12)

    def test_dense_determinant_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            data, hp = random_problem(rng)
            _, _, ref = dense_oracle(data.inputs, data.targets, data.inputs[:1], hp)
            assert gp.log_marginal_likelihood(data, hp) == pytest.approx(ref, rel=1e-8)

    def test_scaled_targets_score_lower(self):
        rng = np.random.default_rng(4)
        data, _ = random_problem(rng, n=15)
        hp = gp.optimize_hyperparams(data, Hyperparams.default(), 200)
        scaled = Dataset(data.inputs, 10 * data.targets)
        assert gp.log_marginal_likelihood(scaled, hp) < gp.log_marginal_likelihood(data, hp)


class TestGradient:
    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            data, hp = random_problem(rng)
            np.testing.assert_allclose(gp.lml_gradient(data, hp), finite_difference_grad(data, hp), rtol=1e-4, atol=1e-7)

    def test_axis_symmetry(self):
        rng = np.random.default_rng(1)
        P = rng.uniform(-1, 1, size=(6, 2))
        X = np.vstack([P, P[:, ::-1]])
        y = np.concatenate([np.cos(P.sum(1)), np.cos(P.sum(1))])
        g = gp.lml_gradient(Dataset(X, y), Hyperparams(1.0, (0.6, 0.6), 0.1))
        assert abs(g[1] - g[2]) < 1e-10

    def test_optimum_is_stationary(self):
        rng = np.random.default_rng(9)
        data, _ = random_problem(rng, n=12)
        hp = gp.optimize_hyperparams(data, Hyperparams.default(), 3000, learning_rate=0.01)
        g = gp.lml_gradient(data, hp)
        assert np.linalg.norm(g) < 1e-2


class TestOptimizer:
    def test_zero_iterations_returns_init(self):
        data, hp = random_problem(np.random.default_rng(0), n=5)
        assert gp.optimize_hyperparams(data, hp, 0) == hp

    def test_never_worse_than_init(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            data, hp = random_problem(rng)
            best = gp.optimize_hyperparams(data, hp, 30, learning_rate=0.3)
            assert gp.log_marginal_likelihood(data, best) >= gp.log_marginal_likelihood(data, hp) - 1e-9

    def test_improves_likelihood(self):
        data, _ = random_problem(np.random.default_rng(12), n=20)
        init = Hyperparams.default()
        best = gp.optimize_hyperparams(data, init, 500)
        assert gp.log_marginal_likelihood(data, best) > gp.log_marginal_likelihood(data, init) + 1.0

    def test_negative_iterations(self):
        data, hp = random_problem(np.random.default_rng(0), n=3)
        with pytest.raises(InvalidParameterError):
            gp.optimize_hyperparams(data, hp, -1)

    def test_failure_returns_best_so_far_with_warning(self, monkeypatch):
        data, hp = random_problem(np.random.default_rng(0), n=6)
        real = gp._lml_and_grad
        calls = {"n": 0}

        def flaky(*args):
            calls["n"] += 1
            if calls["n"] > 3:
                raise NumericalFailure("boom", jitter=gp.JITTER_MAX)
            return real(*args)

        monkeypatch.setattr(gp, "_lml_and_grad", flaky)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            best = gp.optimize_hyperparams(data, hp, 10)
        assert any("stopped" in str(w.message) for w in caught)
        monkeypatch.setattr(gp, "_lml_and_grad", real)
        assert gp.log_marginal_likelihood(data, best) >= gp.log_marginal_likelihood(data, hp) - 1e-9


class TestEstimator:
    def test_fit_predict(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(40, 2))
        y = np.sin(3 * X[:, 0]) * np.cos(2 * X[:, 1])
        est = gp.GPRegressor(n_iterations=200).fit(X, y)
        mean, std = est.predict(X, return_std=True)
        assert np.sqrt(np.mean((mean - y) ** 2)) < 0.1
        assert std.shape == (40,)
        assert est.score(X, y) > 0.9

    def test_get_params_roundtrip(self):
        from sklearn.base import clone

        est = gp.GPRegressor(amplitude=2.0, n_iterations=7)
        assert clone(est).get_params()["n_iterations"] == 7

    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            gp.GPRegressor().predict([[0, 0]])
