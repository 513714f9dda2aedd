"""Deterministic random-stream derivation.

All randomness in the library flows from a single 64-bit experiment seed.
Independent substreams (one per chain, per sweep cell, per worker) are derived
through ``numpy.random.SeedSequence`` spawn keys, so that

* the same ``(seed, path)`` always yields the same stream, and
* streams with different paths are statistically independent.

A "path" is a tuple of small integers naming the consumer, e.g. chain ``i``
uses ``stream(seed, CHAIN, i)``.
"""

from __future__ import annotations

import numpy as np

# Reserved first path component per consumer kind.  Keeping these stable is
# what makes output files byte-reproducible across runs and versions.
CHAIN = 0
SWEEP = 1
MOMENTS = 2
DIAGNOSTIC = 3
WARMUP = 4
REFERENCE = 5


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the RNG stream for ``path`` under the experiment ``seed``."""
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in path))
    return np.random.default_rng(seq)


def describe(seed: int, *path: int) -> str:
    """Human-readable provenance tag recorded alongside chain output."""
    return f"seed={int(seed)} path={tuple(int(k) for k in path)}"
