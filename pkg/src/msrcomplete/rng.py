"""Seeded random streams.

Every stochastic step draws from a Philox-4x64 counter-based generator.
Substreams are keyed on ``(master_seed, index)`` through numpy's
``SeedSequence`` hashing, so record ``i`` of a dataset is reproducible on its
own and independent of how the work is split across processes.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a Philox generator for the substream ``(seed, *keys)``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seeds and stream keys must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
