"""Deterministic named random streams.

Every stochastic choice in the package (weight init, epoch shuffling,
dropout masks, dataset synthesis) draws from its own named stream derived
from a single integer seed.  Streams are independent of each other and of
the order in which they are created, so adding a consumer of one stream
never perturbs the others.
"""

import zlib

import numpy as np

__all__ = ["stream"]


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for `name` under `seed`.

    The (seed, crc32(name)) pair seeds a fresh SeedSequence, so the same
    pair always yields the same generator state.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, key))))
