"""Input validation helpers shared across the numeric modules."""

from __future__ import annotations

import numpy as np

DISTRIBUTION_ATOL = 1e-9


def as_float_array(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_distribution(probs, n_terms: int | None = None, name: str = "probs") -> np.ndarray:
    """Validate a probability vector: 1-D, non-negative, sums to 1 within 1e-9."""
    p = as_float_array(probs, name)
    if p.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {p.shape}")
    if n_terms is not None and p.shape[0] != n_terms:
        raise ValueError(f"{name} has length {p.shape[0]}, expected {n_terms}")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > DISTRIBUTION_ATOL:
        raise ValueError(f"{name} sums to {total!r}, expected 1 within {DISTRIBUTION_ATOL}")
    return p


def check_matrix(x, name: str = "matrix") -> np.ndarray:
    m = as_float_array(x, name)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def check_square(x, name: str = "matrix") -> np.ndarray:
    m = check_matrix(x, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def check_symmetric(x, tol: float = 1e-8, name: str = "matrix") -> np.ndarray:
    m = check_square(x, name)
    if m.size and float(np.max(np.abs(m - m.T))) > tol:
        raise ValueError(f"{name} is not symmetric within {tol}")
    return m


def check_feature_matrix(x, n_features: int | None = None, name: str = "X") -> np.ndarray:
    """Accept a single feature vector or a stack of them; always return 2-D."""
    arr = as_float_array(x, name)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValueError(f"{name} has {arr.shape[1]} features, expected {n_features}")
    return arr


def check_labels(y, n_terms: int, n_rows: int | None = None, name: str = "y") -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"{name} must be integer term ids")
    if n_rows is not None and labels.shape[0] != n_rows:
        raise ValueError(f"{name} has {labels.shape[0]} rows, expected {n_rows}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_terms):
        raise ValueError(f"{name} contains ids outside [0, {n_terms})")
    return labels.astype(np.int64)
