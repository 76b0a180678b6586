"""Input validation helpers shared across the package."""

import numpy as np


def as_float_array(x, name="array"):
    """Coerce to a float64 ndarray, rejecting NaN and inf."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_square(m, name="matrix"):
    m = as_float_array(m, name)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def check_vector(x, d=None, name="vector"):
    x = as_float_array(x, name)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise ValueError(f"{name} must have length {d}, got {x.shape[0]}")
    return x


def check_spd(m, name="matrix"):
    """Validate a symmetric positive definite matrix and return it.

    Symmetry is checked up to a small relative tolerance, definiteness by
    attempting a Cholesky factorization.
    """
    m = check_square(m, name)
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-10 * scale:
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite: "
                         "Cholesky factorization failed") from None
    return 0.5 * (m + m.T)


def check_psd(m, name="matrix", tol=1e-10):
    """Validate a symmetric positive semidefinite matrix and return it."""
    m = check_square(m, name)
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-10 * scale:
        raise ValueError(f"{name} must be symmetric")
    m = 0.5 * (m + m.T)
    w = np.linalg.eigvalsh(m)
    if w.min() < -tol * scale:
        raise ValueError(f"{name} must be positive semidefinite, min eigenvalue {w.min():g}")
    return m


def check_probability(p, name="probability"):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p


def check_positive(x, name="value"):
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"{name} must be positive, got {x}")
    return x
