"""Argument checks shared by the public entry points."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .exceptions import ConfigError, EmptySubgroupError


def check_dataset(d, min_records=1):
    if not isinstance(d, Dataset):
        raise TypeError(f"expected a Dataset, got {type(d).__name__}")
    if len(d) < min_records:
        raise EmptySubgroupError(f"dataset has {len(d)} records; need at least {min_records}")
    return d


def check_gammas(gammas=None, gamma_range=None):
    """Validated ``(gammas, gamma_range)``; at most one may be given."""
    if gamma_range is not None:
        if gammas is not None:
            raise ConfigError("give either gammas or gamma_range, not both")
        g = tuple(float(v) for v in gamma_range)
        if len(g) != 2 or not np.all(np.isfinite(g)) or not g[0] < g[1]:
            raise ConfigError(f"gamma_range must be two increasing finite values, got {gamma_range}")
        return None, g
    if gammas is None:
        return None, None
    g = tuple(float(v) for v in np.atleast_1d(gammas))
    if not g or not np.all(np.isfinite(g)):
        raise ConfigError("gammas must be a non-empty sequence of finite values")
    return g, None


def check_non_negative(value, name):
    value = float(value)
    if not value >= 0:
        raise ConfigError(f"{name} must be non-negative, got {value}")
    return value
