"""Small input-checking helpers shared by the numerical modules."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatch


def as_vector(x, name: str = "x", length: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionMismatch(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def as_matrix(X, name: str = "X", n_cols: int | None = None) -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be two-dimensional, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise DimensionMismatch(f"{name} has {arr.shape[1]} columns, expected {n_cols}")
    return arr


def check_design(y, R) -> tuple[np.ndarray, np.ndarray]:
    """Validate a (target, regressors) pair and return float arrays."""
    y = as_vector(y, "y")
    R = as_matrix(R, "R")
    if R.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"R has {R.shape[0]} rows but y has length {y.shape[0]}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(R))):
        raise ValueError("inputs contain NaN or infinite values")
    return y, R


def as_index_set(support, p: int) -> np.ndarray:
    """Sorted unique integer indices within [0, p)."""
    idx = np.asarray(support)
    if idx.dtype == bool:
        if idx.shape != (p,):
            raise DimensionMismatch(f"boolean mask must have length {p}")
        return np.flatnonzero(idx)
    idx = np.unique(idx.astype(int).ravel())
    if idx.size and (idx[0] < 0 or idx[-1] >= p):
        raise DimensionMismatch(f"support indices must lie in [0, {p})")
    return idx


def check_positive(value: float, name: str, allow_zero: bool = False) -> float:
    value = float(value)
    ok = value >= 0 if allow_zero else value > 0
    if not ok or np.isnan(value):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value
