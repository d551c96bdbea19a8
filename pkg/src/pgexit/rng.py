"""Seedable random streams.

Normals are produced by the inverse normal CDF applied to 53-bit uniforms
drawn from PCG64, so another implementation using the same transform on its
own uniform source matches in distribution.
"""

import numpy as np
from scipy.special import ndtri

_TWO_M53 = 2.0 ** -53


class RngStream:
    """A reproducible random stream. Not safe to share across workers."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, index):
        """Child stream for worker/block `index`.

        The child is keyed on (seed, index) through a SeedSequence, so
        streams for different masters never alias each other.
        """
        ss = np.random.SeedSequence([self.seed & (2**64 - 1), int(index)])
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def integers(self, size=None):
        return self._gen.integers(0, 1 << 53, size=size, dtype=np.int64)

    def uniform(self, size=None):
        """Uniforms on the open interval (0, 1)."""
        return (self.integers(size) + 0.5) * _TWO_M53

    def normal(self, size=None):
        return ndtri(self.uniform(size))
