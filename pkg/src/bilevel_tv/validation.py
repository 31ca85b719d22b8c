"""Input checks shared by the problems, solvers, and estimators."""

import math

import numpy as np


def as_flat_image(arr, name="image"):
    """Coerce a square 2-D array or flat length-n*n vector to (flat copy, n)."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 2:
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"{name} must be square, got shape {a.shape}")
        n = a.shape[0]
    elif a.ndim == 1:
        n = math.isqrt(a.size)
        if n * n != a.size:
            raise ValueError(f"{name} has length {a.size}, not a perfect square")
    else:
        raise ValueError(f"{name} must be 1-D or 2-D, got {a.ndim} dimensions")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a.ravel().copy(), n


def check_length(v, n, name):
    """Require a flat float vector of length ``n``; returns it as ndarray."""
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


def positive(x, name):
    x = float(x)
    if not x > 0:
        raise ValueError(f"{name} must be positive, got {x}")
    return x
