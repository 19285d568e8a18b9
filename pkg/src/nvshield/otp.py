"""One-time-pad encryption with PUF keys and ciphertext uniformity checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .reliability import Key


def _xor(data, key: Key) -> np.ndarray:
    if not key.valid:
        raise ValueError("refusing to use an invalid key")
    d = np.asarray(data, dtype=np.uint8)
    if d.shape != key.bits.shape:
        raise ValueError(f"data has {d.size} bits but key has {key.bits.size}")
    return d ^ key.bits


def encrypt(data, key: Key) -> np.ndarray:
    return _xor(data, key)


def decrypt(cipher, key: Key) -> np.ndarray:
    return _xor(cipher, key)


def key_space_size(n: int, after_bruteforce: bool = False) -> int:
    """Number of candidate keys; observing ciphertexts does not shrink it."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2 ** n


@dataclass
class UniformityResult:
    trials: int
    ones_frequency: np.ndarray
    chi2: float
    dof: int
    p_value: float
    sufficient: bool

    def rejects(self, alpha: float = 0.001) -> bool:
        return self.p_value < alpha


def bit_uniformity(ciphertexts, min_trials: int = 1000) -> UniformityResult:
    """Per-bit ones frequency and a chi-square test of p=0.5 summed over bits."""
    c = np.atleast_2d(np.asarray(ciphertexts, dtype=np.uint8))
    n, width = c.shape
    ones = c.sum(axis=0)
    freq = ones / n
    chi2 = float(np.sum((2 * ones - n) ** 2 / n))  # (O1-E)^2/E + (O0-E)^2/E per bit
    return UniformityResult(n, freq, chi2, width, float(stats.chi2.sf(chi2, width)),
                            n >= min_trials)


def ciphertext_uniformity_test(backup_fn, data, trials: int) -> UniformityResult:
    """Encrypt the same plaintext ``trials`` times with fresh keys.

    ``backup_fn(data, i)`` returns the ciphertext of trial i.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return bit_uniformity(np.array([backup_fn(data, i) for i in range(trials)]))
