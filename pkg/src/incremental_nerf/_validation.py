"""Input checks shared by the estimator, evaluation and CLI layers."""

import numbers

import numpy as np

from .exceptions import DimensionMismatch, DomainError


def check_images(X, min_count=1):
    """``(N, H, W, 3)`` finite float64 array with at least ``min_count`` images."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[-1] != 3:
        raise DimensionMismatch(f"images must be (N, H, W, 3), got {X.shape}")
    if X.shape[0] < min_count:
        raise DomainError(f"need at least {min_count} images, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise DomainError("images contain non-finite values")
    return X


def check_trajectory(X, n=None):
    """``(N, 6)`` rows of ``[wx, wy, wz, tx, ty, tz]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 6:
        raise DimensionMismatch(f"trajectory must be (N, 6), got {X.shape}")
    if n is not None and X.shape[0] != n:
        raise DimensionMismatch(f"expected {n} poses, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise DomainError("trajectory contains non-finite values")
    return X


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise DomainError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive(value, name):
    if not (isinstance(value, numbers.Real) and np.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_choice(value, name, choices):
    if value not in choices:
        raise DomainError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value
