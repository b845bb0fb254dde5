"""Seed handling.

Every random quantity in the package is drawn from a generator keyed by a
tuple of non-negative integers, e.g. ``(seed, draw_index)`` or
``(master_seed, rep, stream)``. Results therefore never depend on the order
in which draws or replications are evaluated.
"""
import numpy as np

from .exceptions import ParameterError


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def stream(*keys):
    """Return an independent ``numpy.random.Generator`` for the key tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def derived_seed(*keys):
    """A 63-bit integer seed derived deterministically from ``keys``."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
