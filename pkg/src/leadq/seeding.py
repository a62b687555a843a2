"""Keyed random generators.

Every random draw in a run comes from ``rng_for(seed, stream, *indices)``, so
results depend only on the run seed and where in the run the draw happens.
Nothing needs saving for a resumed run to continue the same random sequence.
"""
import zlib

import numpy as np


def _tag(name):
    return zlib.crc32(name.encode())


def rng_for(seed, stream, *indices):
    key = [int(seed), _tag(stream)] + [int(i) for i in indices]
    return np.random.default_rng(key)


def seed_for(seed, stream, *indices):
    """A 63-bit integer seed derived the same way as :func:`rng_for`."""
    return int(rng_for(seed, stream, *indices).integers(0, 2**63 - 1))
