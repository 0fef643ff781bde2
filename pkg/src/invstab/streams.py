"""Counter-based random streams.

Every random draw in the package goes through :func:`generator`, which keys a
Philox generator by ``(seed, *stream_ids)``. Two calls with the same key give
the same stream regardless of call order or which worker makes them, so block
parallel work is reproducible.
"""

import numpy as np

__all__ = ["generator", "BLOCK_SIZE"]

# Trajectory / sample block width. Fixed so results do not depend on thread count.
BLOCK_SIZE = 1024


def generator(seed, *stream):
    """Return a Philox-backed ``numpy.random.Generator`` for the given key."""
    if seed is None:
        raise ValueError("a seed is required; unseeded draws are not allowed")
    key = [int(seed)] + [int(s) for s in stream]
    if any(k < 0 for k in key):
        raise ValueError("seed and stream ids must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
