"""Input validation helpers shared across the package."""

import numpy as np


def as_matrix(a, name="array"):
    """Coerce to a C-contiguous float64 2-D array and check finiteness."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def as_vector(a, name="vector"):
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def check_row_stochastic(p, name="probabilities", tol=1e-5):
    """Validate a nonnegative matrix whose rows sum to one."""
    p = as_matrix(p, name)
    if np.any(p < -tol):
        raise ValueError(f"{name} has negative entries")
    row_sums = p.sum(axis=1)
    if np.max(np.abs(row_sums - 1.0)) > tol:
        raise ValueError(f"{name} rows must sum to 1 (max deviation "
                         f"{np.max(np.abs(row_sums - 1.0)):.3g})")
    return p


def check_same_rows(mats, names=None):
    n = mats[0].shape[0]
    for i, m in enumerate(mats[1:], start=1):
        if m.shape[0] != n:
            label = names[i] if names else f"input {i}"
            raise ValueError(f"{label} has {m.shape[0]} rows, expected {n}")
    return n
