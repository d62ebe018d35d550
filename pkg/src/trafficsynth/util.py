"""Small shared helpers."""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Deterministically derive a child seed from integer parts.

    Built on numpy's SeedSequence so sub-streams (per event, per signal
    constituent) are statistically independent and stable across runs.
    """
    if any(p < 0 for p in parts):
        raise ValueError("seed parts must be non-negative")
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def mean_square(x: np.ndarray) -> float:
    """Mean-square power of a signal (the package's power convention)."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return 0.0
    return float(np.mean(x * x))
