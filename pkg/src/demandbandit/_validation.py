"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""
import numbers

import numpy as np

from .exceptions import ConfigError, ContractError

SIMPLEX_ATOL = 1e-9


def check_demand(w, n=None, *, name="w", simplex=True):
    """Return ``w`` as a float64 1-d array, checking it is a demand vector.

    With ``simplex=False`` only nonnegativity is enforced, which is what the
    bidding oracle needs (its winning set is invariant to positive scaling).
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ContractError(f"{name} must be 1-d, got shape {w.shape}")
    if n is not None and w.shape[0] != n:
        raise ContractError(f"{name} has {w.shape[0]} components, expected {n}")
    if not np.all(np.isfinite(w)):
        raise ContractError(f"{name} contains non-finite values")
    if np.any(w < 0):
        raise ContractError(f"{name} has negative components: {w}")
    if simplex and abs(w.sum() - 1.0) > SIMPLEX_ATOL:
        raise ContractError(f"{name} must sum to 1, sums to {w.sum()!r}")
    return w


def check_kpi_vector(v, n=None, *, name="v"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or (n is not None and v.shape[0] != n):
        raise ContractError(f"{name} must be a length-{n} vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ContractError(f"{name} must be finite and nonnegative")
    return v


def check_positive(value, name, *, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    ok = value >= 0 if allow_zero else value > 0
    if not ok or not np.isfinite(value):
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigError(f"{name} must be finite and {bound}, got {value!r}")
    return float(value)


def check_probability(value, name, *, upper_open=True):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    if not (0.0 <= value < 1.0 if upper_open else 0.0 <= value <= 1.0):
        raise ConfigError(f"{name} out of range: {value!r}")
    return float(value)


def check_int(value, name, *, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ConfigError(f"cannot build a Generator from {seed!r}")
