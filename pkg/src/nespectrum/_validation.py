"""Input validation shared by the functional API and the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_data_matrix(X, min_samples=2):
    """Finite 2-D float64 array with at least ``min_samples`` rows."""
    return check_array(
        X,
        dtype=np.float64,
        ensure_2d=True,
        ensure_min_samples=min_samples,
        ensure_all_finite=True,
        order="C",
    )


def check_embedding(Y, n=None):
    """Finite ``(n, 2)`` float64 array, contiguous."""
    Y = check_array(Y, dtype=np.float64, ensure_min_samples=1, ensure_all_finite=True, order="C")
    if Y.shape[1] != 2:
        raise ValueError(f"embeddings must have 2 columns, got {Y.shape[1]}")
    if n is not None and Y.shape[0] != n:
        raise ValueError(f"embedding has {Y.shape[0]} points, expected {n}")
    return Y


def check_positive(name, value, strict=True):
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value!r}")
    return float(value)
