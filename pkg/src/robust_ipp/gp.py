"""Exact Gaussian process regression with an anisotropic squared-exponential kernel.

The functional core (:func:`fit`, :func:`predict`, :func:`log_marginal_likelihood`,
:func:`lml_gradient`, :func:`optimize_hyperparams`) works on plain arrays and
immutable dataclasses. :class:`GPRegressor` wraps it in the scikit-learn
estimator protocol.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from robust_ipp._validation import check_inputs, check_xy
from robust_ipp.exceptions import InvalidParameterError, NumericalFailure

JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
JITTER_START = JITTER_LADDER[0]
JITTER_MAX = JITTER_LADDER[-1]
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparams:
    amplitude: float
    lengthscales: tuple
    noise_std: float

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in np.atleast_1d(self.lengthscales)))
        values = (self.amplitude, self.noise_std) + self.lengthscales
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise InvalidParameterError(f"hyperparameters must be finite and positive, got {self}")

    @classmethod
    def default(cls, dim=2):
        return cls(1.0, (0.5,) * dim, 0.1)

    @property
    def dim(self):
        return len(self.lengthscales)

    def to_log_vector(self):
        """Pack as ``[log amplitude, log lengthscales..., log noise_std]``."""
        return np.log(np.array([self.amplitude, *self.lengthscales, self.noise_std]))

    @classmethod
    def from_log_vector(cls, theta):
        values = np.exp(np.asarray(theta, dtype=float))
        return cls(float(values[0]), tuple(values[1:-1]), float(values[-1]))


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    outlier_flag: np.ndarray = None

    def __post_init__(self):
        self.inputs, self.targets = check_xy(self.inputs, self.targets)
        if self.outlier_flag is None:
            self.outlier_flag = np.zeros(len(self.targets), dtype=bool)
        self.outlier_flag = np.asarray(self.outlier_flag, dtype=bool)
        if self.outlier_flag.shape != self.targets.shape:
            raise ValueError("outlier_flag length must match targets")

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True)
class FittedGP:
    hyperparams: Hyperparams
    train_inputs: np.ndarray
    alpha_vector: np.ndarray
    chol_factor: np.ndarray
    jitter: float = field(default=JITTER_START)


def kernel(a, b, hp):
    """Squared-exponential covariance between two points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ls = np.asarray(hp.lengthscales)
    return hp.amplitude**2 * math.exp(-0.5 * float(np.sum(((a - b) / ls) ** 2)))


def kernel_matrix(A, B, hp):
    ls = np.asarray(hp.lengthscales)
    A = np.asarray(A, dtype=float) / ls
    B = np.asarray(B, dtype=float) / ls
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    return hp.amplitude**2 * np.exp(-0.5 * sq)


def _sq_diffs(X):
    # per-dimension squared differences, shape (D, N, N)
    return (X.T[:, :, None] - X.T[:, None, :]) ** 2


def _factorize(X, hp, sq_diffs=None):
    n = len(X)
    if sq_diffs is None:
        Kx = kernel_matrix(X, X, hp)
    else:
        inv_ls2 = 1.0 / np.asarray(hp.lengthscales) ** 2
        Kx = np.tensordot(-0.5 * inv_ls2, sq_diffs, axes=1)
        np.exp(Kx, out=Kx)
        Kx *= hp.amplitude**2
    diag = np.diag_indices(n)
    for jitter in JITTER_LADDER:
        base = Kx.copy()
        base[diag] += hp.noise_std**2 + jitter
        L, info = lapack.dpotrf(base, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return Kx, L, jitter
    raise NumericalFailure(f"covariance not positive definite with jitter up to {JITTER_MAX:g}", jitter=JITTER_MAX)


def fit(data, hp):
    if len(data) < 1:
        raise ValueError("fit needs at least one training point")
    X = np.asarray(data.inputs, dtype=float)
    _, L, jitter = _factorize(X, hp)
    alpha = cho_solve((L, True), np.asarray(data.targets, dtype=float))
    return FittedGP(hp, X.copy(), alpha, L, jitter)


def predict(model, queries):
    """Predictive mean and standard deviation at ``queries`` (M x D)."""
    Q = check_inputs(queries, model.hyperparams.dim)
    Ks = kernel_matrix(model.train_inputs, Q, model.hyperparams)
    mean = Ks.T @ model.alpha_vector
    v = solve_triangular(model.chol_factor, Ks, lower=True, check_finite=False)
    var = model.hyperparams.amplitude**2 - np.einsum("ij,ij->j", v, v)
    return mean, np.sqrt(np.maximum(var, 0.0))


def predict_prior(hp, queries):
    Q = check_inputs(queries, hp.dim)
    return np.zeros(len(Q)), np.full(len(Q), hp.amplitude)


def _lml_from_factor(y, L, alpha):
    return -0.5 * (y @ alpha + 2.0 * np.sum(np.log(np.diag(L))) + len(y) * LOG_2PI)


def log_marginal_likelihood(data, hp):
    model = fit(data, hp)
    return float(_lml_from_factor(np.asarray(data.targets, dtype=float), model.chol_factor, model.alpha_vector))


def _inverse_from_factor(L):
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalFailure(f"dpotri failed with info={info}")
    # the strict upper triangle of ``L`` is zero, so ``inv`` is lower triangular
    full = inv + inv.T
    full[np.diag_indices(len(full))] *= 0.5
    return full


def _lml_and_grad(X, y, hp, sq_diffs):
    Kx, L, _ = _factorize(X, hp, sq_diffs)
    alpha = cho_solve((L, True), y)
    lml = _lml_from_factor(y, L, alpha)
    W = np.outer(alpha, alpha)
    W -= _inverse_from_factor(L)
    grad = np.empty(hp.dim + 2)
    grad[-1] = hp.noise_std**2 * np.trace(W)  # dK/dlog noise = 2 noise^2 I
    W *= Kx
    grad[0] = W.sum()  # 0.5 * tr(W dK/dlog amp), dK = 2 Kx
    ls2 = np.asarray(hp.lengthscales) ** 2
    for d in range(hp.dim):
        grad[1 + d] = 0.5 * np.vdot(W, sq_diffs[d]) / ls2[d]
    return float(lml), grad


def lml_gradient(data, hp):
    """Gradient of the log marginal likelihood in log-hyperparameter space.

    Ordered as :meth:`Hyperparams.to_log_vector`.
    """
    X = np.asarray(data.inputs, dtype=float)
    return _lml_and_grad(X, np.asarray(data.targets, dtype=float), hp, _sq_diffs(X))[1]


def optimize_hyperparams(data, init, iterations, learning_rate=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam ascent on the log marginal likelihood in log-parameter space.

    Runs exactly ``iterations`` steps and returns the best hyperparameters
    visited, so the result never scores below ``init``. A factorization
    failure mid-run stops early with a ``ConvergenceWarning``.
    """
    if iterations < 0:
        raise InvalidParameterError("iterations must be >= 0")
    X = np.asarray(data.inputs, dtype=float)
    y = np.asarray(data.targets, dtype=float)
    sq = _sq_diffs(X)
    theta = init.to_log_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_hp, best_lml = init, -np.inf
    for t in range(1, iterations + 2):
        try:
            hp = init if t == 1 else Hyperparams.from_log_vector(theta)
            lml, grad = _lml_and_grad(X, y, hp, sq)
        except (NumericalFailure, InvalidParameterError) as exc:
            warnings.warn(f"hyperparameter optimization stopped at step {t - 1}: {exc}", ConvergenceWarning)
            break
        if lml > best_lml:
            best_hp, best_lml = hp, lml
        if t > iterations:
            break
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad**2
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta = theta + learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return best_hp


class GPRegressor(RegressorMixin, BaseEstimator):
    """Zero-mean exact GP regressor with per-dimension lengthscales.

    Parameters
    ----------
    amplitude, lengthscale, noise_std : float
        Initial hyperparameters. ``lengthscale`` is broadcast over input dims.
    n_iterations : int
        Adam steps on the log marginal likelihood during ``fit``; 0 keeps
        the initial hyperparameters.
    learning_rate : float
        Adam step size in log-parameter space.
    """

    def __init__(self, amplitude=1.0, lengthscale=0.5, noise_std=0.1, n_iterations=500, learning_rate=0.01):
        self.amplitude = amplitude
        self.lengthscale = lengthscale
        self.noise_std = noise_std
        self.n_iterations = n_iterations
        self.learning_rate = learning_rate

    def fit(self, X, y):
        data = Dataset(X, y)
        dim = data.inputs.shape[1]
        ls = np.broadcast_to(np.asarray(self.lengthscale, dtype=float), (dim,))
        init = Hyperparams(self.amplitude, tuple(ls), self.noise_std)
        self.hyperparams_ = optimize_hyperparams(data, init, self.n_iterations, self.learning_rate)
        self.model_ = fit(data, self.hyperparams_)
        self.log_marginal_likelihood_ = float(
            _lml_from_factor(data.targets, self.model_.chol_factor, self.model_.alpha_vector)
        )
        self.n_features_in_ = dim
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "model_")
        mean, std = predict(self.model_, X)
        return (mean, std) if return_std else mean
