"""Deterministic RNG derivation.

Every stochastic component draws from a generator derived from
(root seed, stream tags), so any run is reproducible from its config
seed alone and independent streams never share state.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Generator for the stream identified by (seed, *tags).

    Tags may be ints or strings; strings are hashed with crc32 so the
    derivation is stable across processes and Python versions.
    """
    entropy = [int(seed)] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
