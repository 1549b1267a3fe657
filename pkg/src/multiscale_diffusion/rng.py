"""Pinned random streams.

All randomness goes through :class:`Stream`: a Philox-4x64 counter-based bit
generator keyed by ``numpy.random.SeedSequence(seed, spawn_key=path)``.
Variates are built from raw 64-bit words with fixed transforms so the values
do not depend on numpy's sampling algorithms:

* uniform: ``((w >> 11) + 0.5) * 2**-53``, strictly inside (0, 1)
* normal: inverse normal CDF of the uniform (``scipy.special.ndtri``)
* integer in ``[lo, hi)``: ``lo + floor(u * (hi - lo))``

Child streams are addressed by integer paths, e.g. ``Stream(seed, (member,))``
for one ensemble member, so work can be split without sharing state.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import ndtri

_SCALE = 2.0**-53


class Stream:
    def __init__(self, seed: int, path: Sequence[int] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._bits = np.random.Philox(ss)

    def child(self, *path: int) -> "Stream":
        return Stream(self.seed, self.path + tuple(path))

    def uniform(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        raw = self._bits.random_raw(n).astype(np.uint64)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _SCALE
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        u = self.uniform(size)
        return float(ndtri(u)) if size is None else ndtri(u)

    def integers(self, low: int, high: int, size=None) -> np.ndarray | int:
        u = self.uniform(size)
        out = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        return int(out) if size is None else out


def derive_seed(seed: int, *path: int) -> int:
    """A 63-bit integer seed for the child ``path`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
