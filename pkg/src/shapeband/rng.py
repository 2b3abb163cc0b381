"""Counter-based random streams.

Every replicate draws from its own Philox stream keyed by ``(seed, tag, index)``,
so a replicate's noise does not depend on which worker computes it or in what
order replicates are visited.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep the noise of different purposes disjoint for the same seed.
CALIBRATION = 1
DATA = 2
COVERAGE = 3
BOOTSTRAP = 4
PROPERTY = 5

_MASK64 = (1 << 64) - 1


def stream(seed: int, tag: int, index: int) -> np.random.Generator:
    """Return the generator for replicate ``index`` of stream ``tag``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    key = np.array([seed & _MASK64, ((tag & 0xFFFF) << 48) | (index & ((1 << 48) - 1))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_field(seed: int, tag: int, index: int, shape) -> np.ndarray:
    """Standard Gaussian array for one replicate."""
    return stream(seed, tag, index).standard_normal(shape)
