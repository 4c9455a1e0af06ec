"""SplitMix64 random stream.

Pure integer arithmetic, so a seed produces the same draws on every
platform.  Bulk draws are vectorised with wrapping ``uint64`` numpy maths
and are bit-identical to repeated scalar draws.
"""
import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, *keys):
    """Deterministic child seed for ``keys`` (e.g. an image index)."""
    s = seed & MASK64
    for k in keys:
        s = mix64(s + (int(k) + 1) * GAMMA)
    return s


class SeededRng:
    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64s(self, n):
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(GAMMA)
        self.state = (self.state + n * GAMMA) & MASK64
        return _mix64_array(states)

    def uniform(self):
        """One draw in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniforms(self, n):
        return (self.u64s(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform_range(self, lo, hi):
        return lo + (hi - lo) * self.uniform()

    def normals(self, n, sigma=1.0):
        """Box-Muller normals; pairs (r cos t, r sin t) are emitted in order."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return sigma * z.reshape(-1)[:n]

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        u = self.uniforms(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)

    def spawn(self, key):
        return SeededRng(derive_seed(self.state, key))
