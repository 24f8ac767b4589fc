"""Counter-based SplitMix64 generator with Box-Muller normals.

Draw ``k`` (1-based) of a stream with key ``s`` is ``mix64(s + k * GOLDEN)``
modulo 2**64, so any draw can be computed independently and results do
not depend on numpy's generator implementations. See docs/FORMATS.md.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z):
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    # uint64 arithmetic wraps modulo 2**64, which is exactly what we want
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, *keys):
    """Hash a root seed and a path of non-negative integer keys into a stream key."""
    h = mix64((int(seed) & MASK64) + GOLDEN)
    for k in keys:
        # scaling h first keeps the combination order-sensitive
        h = mix64(((h * _M1) & MASK64) ^ mix64((int(k) & MASK64) + GOLDEN))
    return h


class CounterRNG:
    """Sequential view over one SplitMix64 stream."""

    def __init__(self, key):
        self.key = int(key) & MASK64
        self.counter = 0

    def raw(self, n):
        ctr = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + ctr * np.uint64(GOLDEN)
            return _mix64_array(z)

    def uniform(self, n):
        """``n`` doubles in [0, 1) with 53 random bits each."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal(self, n):
        """``n`` standard normals; each pair of uniforms yields two values."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]


def seeded_permutation(seed, n, *keys):
    """Permutation of ``range(n)`` determined by ``seed`` (and optional keys)."""
    u = CounterRNG(derive_seed(seed, *keys)).uniform(n)
    return np.argsort(u, kind="stable")
