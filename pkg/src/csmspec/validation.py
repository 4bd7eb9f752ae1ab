"""Input validation helpers used at the public API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

SIMPLEX_ATOL = 1e-12


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ShapeError(f"shape error: {name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ShapeError(f"shape error: {name} has non-finite entries")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"shape error: {name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"shape error: {name} has non-finite entries")
    return m


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to an (n, d) float array with n >= 1, d >= 1."""
    p = as_matrix(x, name)
    if p.shape[0] < 1 or p.shape[1] < 1:
        raise ShapeError(f"shape error: {name} must be non-empty, got shape {p.shape}")
    return p


def as_labels(y, n: int | None = None, name: str = "labels") -> np.ndarray:
    lab = np.asarray(y)
    if lab.ndim != 1:
        raise ShapeError(f"shape error: {name} must be 1-D")
    if n is not None and lab.shape[0] != n:
        raise ShapeError(f"shape error: {name} has length {lab.shape[0]}, expected {n}")
    return lab.astype(int)


def check_square(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"shape error: {name} must be square, got shape {m.shape}")
    return m


def check_row_stochastic(m: np.ndarray, atol: float = 1e-12, name: str = "kernel") -> None:
    check_square(m, name)
    if m.min() < 0:
        raise ValueError(f"{name} has negative entries (min {m.min():.3e})")
    err = np.abs(m.sum(axis=1) - 1.0).max()
    if err > atol:
        raise ValueError(f"{name} rows must sum to 1 (max deviation {err:.3e})")


def check_simplex(u: np.ndarray, atol: float = SIMPLEX_ATOL, name: str = "control") -> None:
    if u.min() < -atol:
        raise ValueError(f"{name} has negative entries (min {u.min():.3e})")
    s = u.sum()
    if abs(s - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1, got {s!r}")


def check_probability_vector(p: np.ndarray, atol: float = 1e-9, name: str = "measure") -> np.ndarray:
    v = as_vector(p, name)
    check_simplex(v, atol=atol, name=name)
    return v
