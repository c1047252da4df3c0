"""Input validation shared by the estimators and functional cores."""

import numpy as np
from sklearn.utils import check_array, check_consistent_length


def check_inputs(X, dim=None, allow_empty=True):
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=0 if allow_empty else 1)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected {dim} input columns, got {X.shape[1]}")
    return X


def check_xy(X, y):
    X = check_array(X, dtype=np.float64, ensure_min_samples=0)
    y = check_array(y, dtype=np.float64, ensure_2d=False, ensure_min_samples=0)
    if y.ndim != 1:
        raise ValueError("targets must be one-dimensional")
    check_consistent_length(X, y)
    return X, y


def check_probability(value, name, low=0.0, high=1.0, open_low=False, open_high=False):
    value = float(value)
    lo_ok = value > low if open_low else value >= low
    hi_ok = value < high if open_high else value <= high
    if not (np.isfinite(value) and lo_ok and hi_ok):
        lb = "(" if open_low else "["
        rb = ")" if open_high else "]"
        raise ValueError(f"{name} must lie in {lb}{low}, {high}{rb}, got {value}")
    return value
