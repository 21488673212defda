"""Counter-based random streams.

Every stream is addressed by ``(seed, key...)`` through
:class:`numpy.random.SeedSequence` spawn keys and drives a Philox
generator, so the stream of replica block ``b`` never depends on how many
blocks are requested.
"""
from __future__ import annotations

import numpy as np

#: replicas are grouped in fixed-size blocks that share one stream
BLOCK = 50

_PURPOSE = {"modes": 1, "init": 2, "noise": 3, "aux": 4, "compensate": 5,
            "limit_modes": 6, "limit_noise": 7, "ma_noise": 8}


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator addressed by ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def purpose_stream(seed: int, purpose: str, *key: int) -> np.random.Generator:
    return stream(seed, _PURPOSE[purpose], *key)


class BlockStreams:
    """One generator per block of :data:`BLOCK` replicas.

    Draws for a batch of ``n`` replicas are assembled block by block; a
    trailing partial block still draws a full block and discards the
    excess, so replica ``r`` sees identical numbers for any ``n > r``.
    """

    def __init__(self, seed: int, purpose: str, n: int, offset: int = 0):
        self.n = int(n)
        self.offset = int(offset)
        first = self.offset // BLOCK
        last = (self.offset + self.n - 1) // BLOCK if n > 0 else first - 1
        self.blocks = list(range(first, last + 1))
        self.gens = [purpose_stream(seed, purpose, b) for b in self.blocks]

    def _assemble(self, fn, shape):
        out = []
        for b, g in zip(self.blocks, self.gens):
            full = fn(g, (BLOCK,) + tuple(shape))
            lo = max(self.offset - b * BLOCK, 0)
            hi = min(self.offset + self.n - b * BLOCK, BLOCK)
            out.append(full[lo:hi])
        return np.concatenate(out, axis=0)

    def normal(self, *shape) -> np.ndarray:
        return self._assemble(lambda g, s: g.standard_normal(s), shape)

    def uniform(self, *shape) -> np.ndarray:
        return self._assemble(lambda g, s: g.random(s), shape)

    def complex_normal(self, *shape) -> np.ndarray:
        """Standard complex normals with ``E|z|^2 = 1``."""
        z = self.normal(*shape, 2)
        return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)
