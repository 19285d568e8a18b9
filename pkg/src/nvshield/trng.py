"""Challenge source standing in for the on-chip TRNG.

Seeded mode is SHA-256 in counter mode over (seed, block counter), so the
output is a function of the seed and stream position only.
"""
from __future__ import annotations

import hashlib
import os

import numpy as np


class RandomSource:
    def __init__(self, seed: int | None = None, *, os_entropy: bool = False):
        if (seed is None) == (not os_entropy):
            raise ValueError("give exactly one of seed or os_entropy=True")
        self.seed = None if os_entropy else int(seed)
        self.position = 0  # bits consumed so far
        self._buffer = np.zeros(0, dtype=np.uint8)
        self._block = 0

    @classmethod
    def seeded(cls, seed: int) -> "RandomSource":
        return cls(seed)

    @classmethod
    def from_os(cls) -> "RandomSource":
        return cls(os_entropy=True)

    @property
    def mode(self) -> str:
        return "os_entropy" if self.seed is None else "seeded"

    def _refill(self, nbits: int):
        nblocks = -(-nbits // 256)
        if self.seed is None:
            raw = os.urandom(32 * nblocks)
        else:
            prefix = self.seed.to_bytes(16, "little", signed=True)
            raw = b"".join(
                hashlib.sha256(prefix + (self._block + i).to_bytes(8, "little")).digest()
                for i in range(nblocks))
            self._block += nblocks
        fresh = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        self._buffer = np.concatenate([self._buffer, fresh])

    def next_bits(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        if self._buffer.size < n:
            self._refill(n - self._buffer.size)
        out, self._buffer = self._buffer[:n].copy(), self._buffer[n:]
        self.position += n
        return out


def next_bits(src: RandomSource, n: int) -> np.ndarray:
    return src.next_bits(n)
