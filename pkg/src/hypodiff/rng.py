"""Seeded random streams.

Every replication gets its own PCG64 stream derived from ``(seed, key...)``
through :class:`numpy.random.SeedSequence`, so results do not depend on the
order in which replications are executed.
"""
import numpy as np


def make_rng(seed, *keys):
    """Return a Generator for the stream identified by ``seed`` and ``keys``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(rng):
    """Draw a 63-bit integer seed from ``rng`` for a sub-computation."""
    return int(rng.integers(0, 2**63 - 1))
