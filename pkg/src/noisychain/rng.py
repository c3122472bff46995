"""Counter-based random streams keyed by (seed, purpose, index...).

Every random draw in an ensemble computation comes from a stream that is a
pure function of the run seed and the integer coordinates of the work unit
(purpose tag, disorder index, ...). Execution order and thread count
therefore never change the numbers a given work unit sees.
"""

from __future__ import annotations

import numpy as np

DISORDER = 0
GIBBS = 1
NOISE = 2
AUX = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *key)``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
