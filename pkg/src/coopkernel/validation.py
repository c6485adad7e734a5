"""Exceptions and input-checking helpers shared across the package."""

import numpy as np

SIMPLEX_ATOL = 1e-9


class CoopKernelError(Exception):
    pass


class ConfigurationError(CoopKernelError, ValueError):
    pass


class PreconditionError(CoopKernelError, ValueError):
    pass


class NumericalError(CoopKernelError, ArithmeticError):
    pass


class ProtocolError(CoopKernelError, RuntimeError):
    pass


class RoundingError(CoopKernelError, RuntimeError):
    pass


class ConsistencyError(CoopKernelError, AssertionError):
    """An internal invariant that must hold mathematically was violated."""


def check_weights(weights, size=None, name="weights"):
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise PreconditionError(f"{name} must be one-dimensional, got shape {w.shape}")
    if size is not None and w.shape[0] != size:
        raise PreconditionError(f"{name} has length {w.shape[0]}, expected {size}")
    if not np.all(np.isfinite(w)):
        raise PreconditionError(f"{name} contains non-finite entries")
    if np.any(w < 0):
        raise PreconditionError(f"{name} must be nonnegative (min {w.min():.3g})")
    return w


def check_allocation(probs, size=None, atol=SIMPLEX_ATOL):
    """Validate a point on the probability simplex and return it as an array."""
    p = check_weights(probs, size=size, name="allocation")
    if abs(p.sum() - 1.0) > atol:
        raise PreconditionError(f"allocation sums to {p.sum():.12g}, not 1")
    return p


def check_positive(value, name):
    v = float(value)
    if not np.isfinite(v) or v <= 0:
        raise PreconditionError(f"{name} must be a positive finite number, got {value!r}")
    return v


def check_probability(value, name):
    v = float(value)
    if not 0.0 < v < 1.0:
        raise PreconditionError(f"{name} must lie in (0, 1), got {value!r}")
    return v
