"""Counter-based random streams.

Each stream is a Philox generator keyed by (seed, stream id), so any example,
epoch or purpose can be reproduced independently of how many draws other
streams made. Data generators use one stream per example (stream id = example
index); internal purposes carry a tag in the high bits so they never collide
with example indices.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_PURPOSE_SHIFT = 48

# purpose tags for internal streams (example streams use the raw index)
INIT = 1
SHUFFLE = 2
NOISE = 3
SPLIT = 4
PROBE = 5

_U_LO = 2.0 ** -53
_U_HI = float(np.nextafter(1.0, 0.0))


def stream(seed: int, stream_id: int) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64(stream_id)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def example_stream(seed: int, index: int) -> np.random.Generator:
    return stream(seed, index)


def purpose_stream(seed: int, purpose: int, counter: int = 0) -> np.random.Generator:
    return stream(seed, (purpose << _PURPOSE_SHIFT) | counter)


def normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard-normal variates via the inverse CDF of U(0,1) draws."""
    u = np.clip(rng.random(shape), _U_LO, _U_HI)
    return ndtri(u)
