"""Small shared numeric helpers."""

import numpy as np

from .errors import InputError


def round_half_up(x: float) -> int:
    """Round with the half-up convention (2.5 -> 3), unlike banker's round()."""
    return int(np.floor(x + 0.5))


def as_features(a, name: str = "features") -> np.ndarray:
    """Validate and return a finite float64 2-D array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-D array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_labels(a, n: int | None = None, name: str = "labels") -> np.ndarray:
    """Validate and return a 1-D integer label array."""
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D array, got ndim={arr.ndim}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InputError(f"{name} must be integers, got dtype={arr.dtype}")
    if n is not None and arr.shape[0] != n:
        raise InputError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr.astype(np.int64)


def as_scores(a, name: str = "scores") -> np.ndarray:
    """Validate and return a finite float64 1-D array, naming bad indices."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D array, got ndim={arr.ndim}")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise InputError(f"{name} non-finite at indices {bad.tolist()[:10]}")
    return arr
