"""
Integrity tag from sneak-path currents of the NVM crossbar.

Each read step drives a subset of rows at V_read and leaves the other rows
floating, so current also flows through unselected cells. Column currents into
the load resistors are found from a full nodal solve. A tag bit is the parity
of the column current quantised by a per-chip reference step (a folding
comparator), which makes it sensitive to the analog state of every cell.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .device import ChipInstance
from .nvm import DATA, TIMESTAMP, NvmImage, NvmLayout, write_bits

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class TagConfig:
    tag_bits: int = 8
    read_steps: int = 3
    v_read: float = 0.2
    reference_threshold: float | None = None  # ampere, set by calibrate_reference
    calib_quantile: float = 1e-3
    calib_margin: float = 16.0

    def __post_init__(self):
        if self.tag_bits < 1 or self.read_steps < 1:
            raise ValueError("tag_bits and read_steps must be >= 1")
        if self.reference_threshold is not None and self.reference_threshold <= 0:
            raise ValueError("reference_threshold must be positive")

    def driven_rows(self, step: int, n_rows: int) -> np.ndarray:
        return np.flatnonzero(np.arange(n_rows) % self.read_steps == step)

    def bit_sources(self, n_cols: int) -> tuple[np.ndarray, np.ndarray]:
        """(read step, column) feeding each tag bit."""
        if self.tag_bits > n_cols:
            raise ValueError(f"{self.tag_bits} tag bits need at least as many columns, have {n_cols}")
        k = np.arange(self.tag_bits)
        return k % self.read_steps, (k * n_cols) // self.tag_bits


def solve_crossbar_currents(conductance, driven_rows, loads, v_read: float = 0.2) -> np.ndarray:
    """Column load currents of a crossbar with some rows driven and the rest floating.

    ``conductance`` is (rows, cols) or a stack (batch, rows, cols) in siemens;
    ``loads`` are per-column resistances to ground in ohm. Floating rows and
    all columns are free nodes of the nodal system.
    """
    g = np.asarray(conductance, dtype=float)
    single = g.ndim == 2
    g = g[None] if single else g
    batch, n_rows, n_cols = g.shape
    if np.any(g <= 0):
        raise ValueError("conductances must be positive")
    driven = np.zeros(n_rows, dtype=bool)
    driven[np.asarray(driven_rows, dtype=int)] = True
    if not driven.any():
        raise ValueError("at least one row must be driven")
    g_load = 1.0 / np.broadcast_to(np.asarray(loads, dtype=float), (n_cols,))
    floating = np.flatnonzero(~driven)
    u = len(floating)
    gf = g[:, floating, :]  # (batch, u, cols)

    a = np.zeros((batch, u + n_cols, u + n_cols))
    ri = np.arange(u)
    ci = u + np.arange(n_cols)
    a[:, ri, ri] = gf.sum(axis=2)
    a[:, :u, u:] = -gf
    a[:, u:, :u] = -gf.transpose(0, 2, 1)
    a[:, ci, ci] = g.sum(axis=1) + g_load
    b = np.zeros((batch, u + n_cols))
    b[:, u:] = v_read * g[:, driven, :].sum(axis=1)

    x = np.linalg.solve(a, b[..., None])[..., 0]
    resid = np.abs(np.einsum("bij,bj->bi", a, x) - b).max(axis=1)
    scale = np.abs(b).max(axis=1)
    assert np.all(resid <= RESIDUAL_TOL * scale), "nodal solve residual too large"
    currents = x[:, u:] * g_load
    return currents[0] if single else currents


def step_currents(conductance, loads, cfg: TagConfig) -> np.ndarray:
    """Column currents for every read step: (batch, steps, cols)."""
    g = np.asarray(conductance, dtype=float)
    return np.stack([solve_crossbar_currents(g, cfg.driven_rows(s, g.shape[-2]), loads, cfg.v_read)
                     for s in range(cfg.read_steps)], axis=-2)


def selected_currents(conductance, loads, cfg: TagConfig) -> np.ndarray:
    g = np.asarray(conductance, dtype=float)
    g = g[None] if g.ndim == 2 else g
    step, col = cfg.bit_sources(g.shape[-1])
    return step_currents(g, loads, cfg)[:, step, col]


def quantise(currents, reference: float) -> np.ndarray:
    return (np.floor(np.asarray(currents) / reference).astype(np.int64) & 1).astype(np.uint8)


def tags_for_conductance(conductance, loads, cfg: TagConfig) -> np.ndarray:
    if cfg.reference_threshold is None:
        raise ValueError("tag reference threshold is not calibrated")
    return quantise(selected_currents(conductance, loads, cfg), cfg.reference_threshold)


def chip_conductance(chip: ChipInstance, temperature: float | None = None) -> np.ndarray:
    temperature = chip.spec.temp_ambient if temperature is None else temperature
    return 1.0 / chip.nvm.resistance(chip.spec, temperature)


def generate_tag(chip: ChipInstance, layout: NvmLayout, cfg: TagConfig) -> np.ndarray:
    """Tag of the chip's current NVM analog state (tag is read at ambient temperature)."""
    covered = np.concatenate([layout.cells(DATA), layout.cells(TIMESTAMP) if layout.size(TIMESTAMP) else []])
    if not chip.nvm.written.ravel()[covered.astype(int)].all():
        raise ValueError("tagged region has unwritten cells")
    return tags_for_conductance(chip_conductance(chip), chip.tag_loads, cfg)[0]


def verify(chip: ChipInstance, layout: NvmLayout, stored, cfg: TagConfig) -> bool:
    stored = np.asarray(stored, dtype=np.uint8)
    if stored.shape != (cfg.tag_bits,):
        raise ValueError(f"stored tag has {stored.size} bits, expected {cfg.tag_bits}")
    return bool(np.array_equal(generate_tag(chip, layout, cfg), stored))


def randomize_timestamp(image: NvmImage, src) -> NvmImage:
    """Force-write fresh random bits into the timestamp cells."""
    n = image.layout.size(TIMESTAMP)
    if n:
        write_bits(image.chip, image.layout, TIMESTAMP, src.next_bits(n), skip_unchanged=False)
    return image


def calibrate_reference(chip: ChipInstance, cfg: TagConfig, trials: int = 2000,
                        seed: int = 0) -> TagConfig:
    """Pick the quantisation step for this chip.

    Starting from the median selected-column current over random memory
    states, the step is halved until it is finer than the small end of the
    current changes caused by rewriting a single cell, either with its own
    value or flipped.
    Uses the chip's process draws with private noise; the chip is not written.
    """
    rng = np.random.default_rng([seed, chip.seed])
    spec, shape = chip.spec, chip.nvm.shape
    state = rng.integers(0, 2, (trials,) + shape).astype(np.uint8)
    noise = np.exp(spec.sigma_c2c * rng.standard_normal((trials,) + shape))
    g = chip.nvm.conductance_for(state, noise, spec, spec.temp_ambient)
    base = selected_currents(g, chip.tag_loads, cfg)

    cell = rng.integers(0, shape[0] * shape[1], trials)
    r, c = np.unravel_index(cell, shape)
    t = np.arange(trials)
    noise2 = noise.copy()
    noise2[t, r, c] = np.exp(spec.sigma_c2c * rng.standard_normal(trials))
    g2 = chip.nvm.conductance_for(state, noise2, spec, spec.temp_ambient)
    state2 = state.copy()
    state2[t, r, c] ^= 1
    g3 = chip.nvm.conductance_for(state2, noise2, spec, spec.temp_ambient)
    delta = np.abs(np.concatenate([selected_currents(g2, chip.tag_loads, cfg) - base,
                                   selected_currents(g3, chip.tag_loads, cfg) - base]))

    target = np.quantile(delta[delta > 0], cfg.calib_quantile) / cfg.calib_margin
    ref = float(np.median(base))
    while ref > target:
        ref /= 2
    return replace(cfg, reference_threshold=ref)
