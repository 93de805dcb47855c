"""Counter-based generators keyed by explicit integer tuples."""

from __future__ import annotations

import numpy as np


def keyed_rng(*key: int) -> np.random.Generator:
    """Philox generator seeded from the given key; no global state."""
    entropy = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
