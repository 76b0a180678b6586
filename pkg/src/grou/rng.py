"""Seeded random number streams.

Every stochastic routine in the package draws from a Philox counter-based
generator. Streams are derived from an integer seed plus a path of integer
identifiers (replicate index, channel index, ...), so replicate k of an
experiment reads the same numbers no matter how the replicate loop is
scheduled.
"""

import numpy as np


def rng_stream(seed, *path) -> np.random.Generator:
    """Return the generator for stream `path` under `seed`.

    :param seed: base integer seed of the run.
    :param path: optional integer identifiers naming a sub-stream,
        e.g. ``rng_stream(seed, replicate)`` or
        ``rng_stream(seed, replicate, channel)``.
    """
    key = tuple(int(p) for p in path)
    seq = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))
