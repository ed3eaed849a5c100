"""Seeded, portable Gaussian streams.

Uniforms come from a Philox counter-based generator keyed by
``SeedSequence([seed, *stream])``. Normals are produced from pairs of
uniforms with the Box-Muller transform::

    u1 = 1 - U[0, 1)          (so log(u1) is finite)
    u2 = U[0, 1)
    z0 = sqrt(-2 log u1) cos(2 pi u2)
    z1 = sqrt(-2 log u1) sin(2 pi u2)

Pairs are emitted interleaved (z0, z1, z0, z1, ...) and truncated to the
requested size, so an odd-sized request consumes one extra uniform pair.
"""

from __future__ import annotations

import numpy as np


class SeededRng:
    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self.stream])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *index: int) -> "SeededRng":
        """Independent child stream; depends only on (seed, stream, index)."""
        return SeededRng(self.seed, self.stream + tuple(index))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def normal(self, shape=()) -> np.ndarray | float:
        if isinstance(shape, (int, np.integer)):
            shape = (int(shape),)
        shape = tuple(shape)
        n = 1
        for s in shape:
            n *= int(s)
        pairs = (n + 1) // 2
        u = self._gen.random(2 * pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        if not shape:
            return float(z[0])
        return z[:n].reshape(shape)
