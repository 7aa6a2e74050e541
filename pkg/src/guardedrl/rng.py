"""Deterministic random-stream derivation.

Every stochastic operation in this package takes an integer seed and derives
independent sub-streams through ``spawn(seed, *path)``.  The bit generator is
Philox (counter-based), keyed through ``numpy.random.SeedSequence`` with the
path as spawn key, so a given (seed, path) pair always yields the same stream
regardless of how many other streams were drawn from, and per-rollout streams
can be sharded and merged without reordering draws.
"""

from __future__ import annotations

import numpy as np

__all__ = ["spawn"]


def spawn(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for integer ``seed`` at derivation ``path``."""
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
