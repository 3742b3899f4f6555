"""Small input-validation helpers used across the package."""

import numbers

import numpy as np

from .exceptions import InvalidInput, MinWindow


def as_points(X, name="X", allow_single=True):
    """Return ``X`` as a finite float array of shape (n, 3).

    A single point of shape (3,) is promoted to (1, 3) when
    ``allow_single`` is true.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1 and allow_single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInput(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite values")
    return arr


def as_series(y, name="y", min_length=1):
    """Return ``y`` as a finite 2-D float array (n, k); 1-D input becomes (n, 1)."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite values")
    if arr.shape[0] < min_length:
        raise MinWindow(f"{name} needs at least {min_length} rows, got {arr.shape[0]}")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise InvalidInput(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


def check_int(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidInput(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidInput(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def rng_from(seed):
    """Return a ``numpy.random.Generator`` for an int seed, SeedSequence or Generator."""
    return np.random.default_rng(seed)
