"""
Voting-based reliability enhancement for PUF keys.

Closed forms for all-agree and majority voting, Monte Carlo counterparts, the
run-time clean-bit key extraction and the test-time screening mask.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

ALL_AGREE = "all_agree"
MAJORITY = "majority"


def _check_p(p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p must lie in [0, 1]")
    return p


def _check_n(N):
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    return int(N)


def all_agree_undetected_prob(p, N):
    """Probability that a bit error slips past all-agree voting.

    With a = p^N and b = (1-p)^N this is 2[a(1-a) + b(1-b) - ab].
    """
    p, N = _check_p(p), _check_n(N)
    a, b = p ** N, (1 - p) ** N
    out = 2 * (a * (1 - a) + b * (1 - b) - a * b)
    return float(out) if out.ndim == 0 else out


def majority_correct_prob(p, N):
    """Probability that the majority of N draws equals the value of probability p."""
    p, N = _check_p(p), _check_n(N)
    if N % 2 == 0:
        raise ValueError("majority voting needs an odd number of samples")
    out = sum(comb(N, r) * p ** r * (1 - p) ** (N - r) for r in range((N + 1) // 2, N + 1))
    return float(out) if np.ndim(out) == 0 else out


def simulate_voting(p, N, scheme, trials, seed) -> float:
    """Monte Carlo estimate matching the corresponding closed form.

    all_agree: an encryption round and a decryption round of N draws each; a
    trial counts when at least one round is unanimous and the two rounds do not
    end up unanimous on the same value, i.e. the bit's contribution to the key
    differs between the rounds.
    majority: fraction of trials in which the majority of N draws equals the
    value drawn with probability p.
    """
    p, N = float(_check_p(p)), _check_n(N)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    if scheme == ALL_AGREE:
        ones = rng.binomial(N, p, size=(2, trials))
        # 1 = unanimous ones, 0 = unanimous zeros, -1 = mixed (bit discarded)
        verdict = np.where(ones == N, 1, np.where(ones == 0, 0, -1))
        any_kept = (verdict[0] >= 0) | (verdict[1] >= 0)
        same = (verdict[0] == verdict[1]) & (verdict[0] >= 0)
        return float(np.mean(any_kept & ~same))
    if scheme == MAJORITY:
        if N % 2 == 0:
            raise ValueError("majority voting needs an odd number of samples")
        ones = rng.binomial(N, p, size=trials)
        return float(np.mean(ones > N // 2))
    raise ValueError(f"unknown voting scheme {scheme!r}")


@dataclass(frozen=True)
class KeyExtractionParams:
    T: int = 2
    nKey: int = 16
    resp: int = 32

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if not 1 <= self.nKey <= self.resp:
            raise ValueError("need 1 <= nKey <= resp")


@dataclass(frozen=True)
class Key:
    bits: np.ndarray
    valid: bool

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))

    def __eq__(self, other):
        return (isinstance(other, Key) and self.valid == other.valid
                and np.array_equal(self.bits, other.bits))

    __hash__ = None


def extract_key(samples, params: KeyExtractionParams = KeyExtractionParams(), mask=None):
    """Scan positions in order and keep those where all T samples agree.

    Positions flagged in ``mask`` (screened as unstable at test time) are
    skipped like disagreeing ones. Returns (Key, x) with x the number of
    positions discarded before the key was complete.
    """
    s = np.asarray(samples, dtype=np.uint8)
    if s.ndim != 2 or s.shape[0] != params.T or s.shape[1] != params.resp:
        raise ValueError(f"expected a {params.T}x{params.resp} sample matrix, got {s.shape}")
    clean = (s == s[0]).all(axis=0)
    if mask is not None:
        clean &= ~np.asarray(mask, dtype=bool)
    positions = np.flatnonzero(clean)
    if len(positions) < params.nKey:
        return Key(s[0, positions], False), int(params.resp - len(positions))
    chosen = positions[:params.nKey]
    x = int(chosen[-1] + 1 - params.nKey)
    return Key(s[0, chosen], True), x


def screening_mask(test_responses) -> np.ndarray:
    """Unstable-position mask from N_test repeated raw responses (N_test x resp).

    A position is masked when the evaluations do not all agree.
    """
    r = np.asarray(test_responses, dtype=np.uint8)
    if r.ndim != 2 or len(r) < 2:
        raise ValueError("screening needs at least two evaluations")
    return ~(r == r[0]).all(axis=0)
