"""Named, independent random streams derived from integer seeds.

Every consumer (splits, folds, noise, filters, ...) gets its own stream so that
reusing one integer seed across steps never correlates their draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *extra]))
