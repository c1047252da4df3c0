"""Copula-based outlier detection (COPOD).

Each training column is summarized by its sorted values, so the empirical
left and right tail CDFs are binary searches. A point's score is the largest
of three sums of per-dimension negative log tail probabilities::

    left   = sum_o -ln Fl_o(x_o)
    right  = sum_o -ln Fr_o(x_o)
    skewed = sum_o -ln S_o(x_o),   S_o = Fl_o if skew_o < 0 else Fr_o

Tail probabilities are floored at ``1 / (n_train + 1)`` before the log.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from robust_ipp._validation import check_inputs, check_probability
from robust_ipp.exceptions import InvalidParameterError

# |skewness| below this is round-off; treating it as 0 keeps the skew-corrected
# channel stable under translation of symmetric columns
SKEW_TOL = 1e-10


@dataclass(frozen=True)
class CopodModel:
    sorted_train: np.ndarray
    skewness: np.ndarray
    n_train: int
    threshold: float
    contamination: float
    degenerate_dims: tuple = ()

    @property
    def n_features(self):
        return self.sorted_train.shape[1]


def skewness(values):
    """Sample skewness: 1/N third central moment over the cubed 1/(N-1) std.

    A constant column returns 0, as does any value within ``SKEW_TOL`` of 0.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("skewness needs at least two values")
    dev = v - v.mean()
    if np.ptp(v) == 0.0:
        return 0.0
    m3 = np.mean(dev**3)
    sd3 = math.sqrt(np.sum(dev**2) / (v.size - 1)) ** 3
    if sd3 == 0.0:
        return 0.0
    skew = float(m3 / sd3)
    return 0.0 if abs(skew) < SKEW_TOL else skew


def ecdf_left(model, dim, y):
    col = model.sorted_train[:, dim]
    return np.searchsorted(col, y, side="right") / model.n_train


def ecdf_right(model, dim, y):
    col = model.sorted_train[:, dim]
    return (model.n_train - np.searchsorted(col, y, side="left")) / model.n_train


def _tail_probabilities(model, X):
    n = model.n_train
    left = np.empty(X.shape)
    right = np.empty(X.shape)
    for o in range(model.n_features):
        col = model.sorted_train[:, o]
        left[:, o] = np.searchsorted(col, X[:, o], side="right") / n
        right[:, o] = (n - np.searchsorted(col, X[:, o], side="left")) / n
    return left, right


def _score_batch(model, X):
    left, right = _tail_probabilities(model, X)
    floor = 1.0 / (model.n_train + 1)
    nl = -np.log(np.maximum(left, floor))
    nr = -np.log(np.maximum(right, floor))
    ns = np.where(model.skewness < 0, nl, nr)
    channels = np.stack([nl.sum(axis=1), nr.sum(axis=1), ns.sum(axis=1)])
    return channels.max(axis=0)


def score(model, point):
    """Outlier score of one point (larger is more anomalous)."""
    X = check_inputs(np.atleast_2d(point), model.n_features)
    return float(_score_batch(model, X)[0])


def score_samples(model, batch):
    X = check_inputs(batch, model.n_features)
    if len(X) == 0:
        return np.empty(0)
    return _score_batch(model, X)


def fit_copod(train, contamination=0.1):
    X = check_inputs(train, allow_empty=False)
    if len(X) < 2:
        raise ValueError("COPOD needs at least two training points")
    try:
        contamination = check_probability(contamination, "contamination", 0.0, 0.5, open_low=True, open_high=True)
    except ValueError as exc:
        raise InvalidParameterError(str(exc)) from None
    skew = np.array([skewness(X[:, o]) for o in range(X.shape[1])])
    degenerate = tuple(o for o in range(X.shape[1]) if np.ptp(X[:, o]) == 0.0)
    partial = CopodModel(np.sort(X, axis=0), skew, len(X), np.inf, contamination, degenerate)
    train_scores = _score_batch(partial, X)
    threshold = float(np.quantile(train_scores, 1.0 - contamination))
    return CopodModel(partial.sorted_train, skew, len(X), threshold, contamination, degenerate)


def detect(model, batch):
    """Boolean outlier flags; a score equal to the threshold is an inlier."""
    return score_samples(model, batch) > model.threshold


class COPOD(BaseEstimator):
    """Estimator wrapper around :func:`fit_copod`.

    Labels follow the PyOD convention: 1 marks an outlier, 0 an inlier.

    Attributes
    ----------
    model_ : CopodModel
    decision_scores_ : ndarray of shape (n_samples,)
        Scores of the training points.
    threshold_ : float
    labels_ : ndarray of shape (n_samples,)
    """

    def __init__(self, contamination=0.1):
        self.contamination = contamination

    def fit(self, X, y=None):
        self.model_ = fit_copod(X, self.contamination)
        X = check_inputs(X)
        self.n_features_in_ = X.shape[1]
        self.decision_scores_ = score_samples(self.model_, X)
        self.threshold_ = self.model_.threshold
        self.labels_ = (self.decision_scores_ > self.threshold_).astype(int)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return score_samples(self.model_, X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return detect(self.model_, X).astype(int)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
