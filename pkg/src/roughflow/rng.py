"""Counter-based random streams keyed by (seed, index).

Each ensemble point owns an independent Philox stream, so per-point draws
do not depend on how points are split across workers.
"""

from __future__ import annotations

import numpy as np


def point_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=int(seed), counter=[int(index), int(stream), 0, 0])
    )


def uniform_points(seed: int, n: int, lo, hi, stream: int = 0) -> np.ndarray:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    out = np.empty((n, len(lo)))
    for i in range(n):
        out[i] = lo + (hi - lo) * point_rng(seed, i, stream).random(len(lo))
    return out


def unit_directions(seed: int, n: int, dim: int, stream: int = 1) -> np.ndarray:
    out = np.empty((n, dim))
    for i in range(n):
        g = point_rng(seed, i, stream).standard_normal(dim)
        out[i] = g / np.linalg.norm(g)
    return out
