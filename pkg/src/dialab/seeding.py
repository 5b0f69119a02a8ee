"""Named deterministic RNG substreams.

Every stochastic component pulls from a stream derived from (master seed,
purpose tag, index), so training, evaluation and corpus generation never
share state and any episode can be re-derived in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np


def rng_stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFF,
                                zlib.crc32(tag.encode()),
                                index & 0xFFFFFFFF]))
