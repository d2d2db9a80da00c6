"""SplitMix64 random stream.

SplitMix64 is tiny, has a fixed published definition and reproduces across
languages and platforms, which numpy's bit generators do not promise.
"""
import math

import numpy as np

from . import kernels

_MASK = 0xFFFFFFFFFFFFFFFF
_TWO_M53 = 2.0 ** -53


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self, n):
        out, self.state = kernels.splitmix64_fill(self.state, n)
        return out

    def uniform(self, n, low=0.0, high=1.0):
        """``n`` doubles in ``[low, high)`` built from the top 53 bits."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        return low + (high - low) * u

    def integers(self, high, n=None):
        """Integers in ``[0, high)``; scalar when ``n`` is None."""
        if high < 1:
            raise ValueError("high must be >= 1")
        u = self.uniform(1 if n is None else n)
        out = np.minimum((u * high).astype(np.int64), high - 1)
        return int(out[0]) if n is None else out

    def normal(self, n):
        """Standard normals via Box-Muller (two uniforms per pair)."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])
        return z[:n]

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self):
        """Independent child stream seeded from this one."""
        return SplitMix64(int(self.next_u64(1)[0]))
