"""Input validation helpers used across the package."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError, DataError, DimensionMismatchError


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float64 array, optionally checking its length."""
    v = np.asarray(getattr(x, "vector", x), dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DataError(f"{name} contains a non-finite value")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"{name} has dimension {v.shape[0]}, expected {dim}")
    return v


def as_matrix(X, dim=None, name="X", allow_empty=False):
    """Return ``X`` as a finite 2-D float64 array of shape (n, dim)."""
    M = np.asarray(X, dtype=np.float64)
    if M.ndim == 1 and M.size == 0 and allow_empty:
        M = M.reshape(0, dim if dim is not None else 0)
    if M.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {M.shape}")
    if M.shape[0] == 0 and not allow_empty:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(M)):
        raise DataError(f"{name} contains a non-finite value")
    if dim is not None and M.shape[1] != dim:
        raise DimensionMismatchError(f"{name} has dimension {M.shape[1]}, expected {dim}")
    return M


def check_sigma(sigma):
    if isinstance(sigma, bool) or not isinstance(sigma, numbers.Real):
        raise ConfigError(f"sigma must be a real number, got {sigma!r}")
    if not (np.isfinite(sigma) and sigma > 0):
        raise ConfigError(f"sigma must be positive and finite, got {sigma!r}")
    return float(sigma)


def check_neighbor_limit(neighbor_limit, n_centers=None):
    """Normalise ``neighbor_limit`` to ``None`` (all centers) or a positive int."""
    if neighbor_limit is None or neighbor_limit == "all":
        return None
    if isinstance(neighbor_limit, bool) or not isinstance(neighbor_limit, numbers.Integral):
        raise ConfigError(f"neighbor_limit must be 'all' or a positive integer, got {neighbor_limit!r}")
    if neighbor_limit < 1:
        raise ConfigError(f"neighbor_limit must be positive, got {neighbor_limit}")
    if n_centers is not None and neighbor_limit > n_centers:
        raise ConfigError(f"neighbor_limit={neighbor_limit} exceeds the {n_centers} available centers")
    return int(neighbor_limit)
