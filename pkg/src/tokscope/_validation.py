"""Input validation helpers shared across the package."""

import numpy as np


class OracleScopeError(ValueError):
    """Raised when an exhaustive oracle is asked to run outside its size limit."""


class MarginalMismatchError(ValueError):
    """Raised when a coupling does not carry the marginals it claims to."""


class EnsembleSizeError(ValueError):
    """Raised when an exhaustive sequence ensemble would exceed the enumeration limit."""


class ZeroProbabilityPathError(ValueError):
    """Raised when a pathwise quantity is requested on a zero-probability path."""


class NonFiniteLossError(FloatingPointError):
    """Raised when training produces a non-finite loss."""


def check_distribution(p, name="distribution", atol=1e-12, axis=-1):
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    s = p.sum(axis=axis)
    if not np.allclose(s, 1.0, atol=atol, rtol=0):
        raise ValueError(f"{name} does not sum to 1 (max deviation {np.max(np.abs(s - 1)):.3e})")
    return p


def check_tokens(tokens, n_tokens, name="tokens"):
    """Return `tokens` as an int64 array, raising ValueError for out-of-range ids."""
    arr = np.asarray(tokens)
    if arr.size == 0:
        return arr.astype(np.int64).reshape(arr.shape)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name} must be integer token ids")
    arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= n_tokens:
        raise ValueError(f"{name} contain ids outside [0, {n_tokens})")
    return arr


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_unit_rows(X, atol=1e-9, name="vectors"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > atol):
        raise ValueError(f"{name} rows must have unit norm")
    return X


def normalize_rows(X):
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero row")
    return X / norms


def readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a
