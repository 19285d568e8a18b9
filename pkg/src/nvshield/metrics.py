"""PUF quality metrics over response sets and tag quality metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nvm import DATA, NvmLayout
from .tag import TagConfig, tags_for_conductance


@dataclass
class MetricReport:
    name: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.values.size and ((self.values < -1e-12).any() or (self.values > 1 + 1e-12).any()):
            raise ValueError(f"{self.name}: normalised metric outside [0, 1]")

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())

    def summary(self) -> dict:
        return {"metric": self.name, "n": int(self.values.size), "mean": self.mean,
                "min": self.min, "max": self.max}


def _bits2d(r):
    r = np.asarray(r, dtype=np.uint8)
    if r.ndim != 2:
        raise ValueError("expected a 2-D array of responses")
    return r


def uniqueness(responses) -> MetricReport:
    """Inter-chip HD. ``responses``: (chips, L) for one challenge.

    Values are per chip: its mean normalised HD to every other chip, so their
    mean is the all-pairs mean.
    """
    r = _bits2d(responses)
    n, width = r.shape
    if n < 2:
        raise ValueError("uniqueness needs at least two chips")
    ones = r.sum(axis=0)
    # a chip with a 1 differs from the n - ones chips holding 0 there, and vice versa
    diff = np.where(r == 1, n - ones, ones)
    return MetricReport("uniqueness", diff.sum(axis=1) / ((n - 1) * width))


def uniformity(responses) -> MetricReport:
    """Ones fraction of each response; ``responses``: (challenges, L)."""
    return MetricReport("uniformity", _bits2d(responses).mean(axis=1))


def bit_aliasing(responses) -> MetricReport:
    """Per-bit ones fraction across chips; ``responses``: (chips, L)."""
    return MetricReport("bit_aliasing", _bits2d(responses).mean(axis=0))


def diffuseness(responses) -> MetricReport:
    """Intra-chip HD between distinct challenges; ``responses``: (challenges, L).

    Values are per challenge (mean HD to the other challenges' responses).
    """
    rep = uniqueness(responses)
    rep.name = "diffuseness"
    return rep


def majority_reference(cycles) -> np.ndarray:
    r = _bits2d(cycles)
    return (2 * r.sum(axis=0) > len(r)).astype(np.uint8)


def reliability(cycles, reference=None) -> MetricReport:
    """1 - normalised HD of each cycle to ``reference`` (majority vote by default)."""
    r = _bits2d(cycles)
    if len(r) < 2:
        raise ValueError("reliability needs at least two cycles")
    ref = majority_reference(r) if reference is None else np.asarray(reference, dtype=np.uint8)
    return MetricReport("reliability", 1 - (r != ref).mean(axis=1))


def steadiness(cycles) -> MetricReport:
    """Per-bit 1 + log2 max(p, 1-p) with p the ones frequency over cycles."""
    r = _bits2d(cycles)
    if len(r) < 2:
        raise ValueError("steadiness needs at least two cycles")
    p = r.mean(axis=0)
    return MetricReport("steadiness", 1 + np.log2(np.maximum(p, 1 - p)))


# tag metrics

def balance_score(tags) -> MetricReport:
    """Per tag bit 1 - |freq(1) - freq(0)|; 1 means perfectly balanced."""
    f = _bits2d(tags).mean(axis=0)
    return MetricReport("balance", 1 - np.abs(2 * f - 1))


def avalanche(base_tags, changed_tags) -> MetricReport:
    """Fraction of tag bits flipped by each single-bit data change."""
    return MetricReport("avalanche", (_bits2d(base_tags) != _bits2d(changed_tags)).mean(axis=1))


def diffusion(base_tags, swept_tags) -> MetricReport:
    """Per-tag-bit flip probability over every single data-bit position.

    ``swept_tags`` is (memories, data_bits, tag_bits): the tag after flipping
    each data bit in turn.
    """
    base = _bits2d(base_tags)
    swept = np.asarray(swept_tags, dtype=np.uint8)
    return MetricReport("diffusion", (swept != base[:, None, :]).mean(axis=(0, 1)))


def random_memories(chip, n: int, rng):
    shape = (n,) + chip.nvm.shape
    state = rng.integers(0, 2, shape).astype(np.uint8)
    noise = np.exp(chip.spec.sigma_c2c * rng.standard_normal(shape))
    return state, noise


def _tags(chip, cfg, state, noise):
    g = chip.nvm.conductance_for(state, noise, chip.spec, chip.spec.temp_ambient)
    return tags_for_conductance(g, chip.tag_loads, cfg)


def tag_metrics(chip, cfg: TagConfig, trials: int, seed: int = 0,
                layout: NvmLayout = NvmLayout()) -> dict:
    """Balance, avalanche and diffusion of a calibrated tag over random memories.

    A data-bit change rewrites one cell of the data region to the opposite
    state with fresh write noise.
    """
    rng = np.random.default_rng(seed)
    state, noise = random_memories(chip, trials, rng)
    base = _tags(chip, cfg, state, noise)
    cells = layout.cells(DATA)
    t = np.arange(trials)

    def flipped(cell):
        r, c = np.unravel_index(cell, chip.nvm.shape)
        s2, n2 = state.copy(), noise.copy()
        s2[t, r, c] ^= 1
        n2[t, r, c] = np.exp(chip.spec.sigma_c2c * rng.standard_normal(trials))
        return _tags(chip, cfg, s2, n2)

    single = flipped(rng.choice(cells, trials))
    swept = np.stack([flipped(np.full(trials, c)) for c in cells], axis=1)
    return {"balance": balance_score(base), "avalanche": avalanche(base, single),
            "diffusion": diffusion(base, swept)}
