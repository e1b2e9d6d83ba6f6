"""Deterministic seed derivation for reproducible, parallel-safe streams."""

from __future__ import annotations

import numpy as np

__all__ = ["derive", "generator"]


def derive(seed, *tail: int) -> np.random.SeedSequence:
    """Child seed sequence from an int (or int tuple) plus fixed tail ids.

    Streams keyed by distinct tails are independent, and the derivation does
    not depend on evaluation order, so parallel and sequential runs that use
    the same keys draw identical numbers.
    """
    head = [int(x) for x in seed] if isinstance(seed, (tuple, list)) else [int(seed)]
    return np.random.SeedSequence(head + list(tail))


def generator(seed, *tail: int) -> np.random.Generator:
    return np.random.default_rng(derive(seed, *tail))
