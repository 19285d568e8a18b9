"""
Time-multiplexed memristor crossbar PUF.

Each block is a rows x cols crossbar. Challenge bit i programs one of the two
rows (2i, 2i+1) to LRS, and response bit j compares the summed conductance of
columns 2j and 2j+1. Blocks share the challenge and are evaluated one after the
other; their outputs are concatenated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bits import as_bits
from .device import HRS, LRS, ChipInstance, CycleContext

PHASES = ("reset_all", "challenge", "read")
PHASE_CYCLES = {"reset_all": 0.5, "challenge": 0.25, "read": 0.25}

_CHUNK = 256  # evaluations per vectorised batch


def row_pattern(challenges, rows: int) -> np.ndarray:
    """LRS mask over rows for each challenge: (..., rows//2) bits -> (..., rows)."""
    c = np.asarray(challenges, dtype=bool)
    if c.shape[-1] * 2 != rows:
        raise ValueError(f"challenge width {c.shape[-1]} does not match {rows} rows")
    out = np.empty(c.shape[:-1] + (rows,), dtype=bool)
    out[..., 0::2] = c
    out[..., 1::2] = ~c
    return out


def sense_columns(conductance) -> np.ndarray:
    """Differential read: bit j = 1 iff column 2j sums higher than column 2j+1.

    ``conductance`` has shape (..., rows, cols); exact ties read as 0.
    """
    sums = np.asarray(conductance, dtype=float).sum(axis=-2)
    return (sums[..., 0::2] > sums[..., 1::2]).astype(np.uint8)


def _base_conductance(chip: ChipInstance, temperature: float):
    spec, arr = chip.spec, chip.puf
    scale = 1.0 + arr.tempco * (temperature - spec.temp_ambient)
    g_lrs = 1.0 / (spec.lrs_nominal * arr.process_lrs * scale)
    g_hrs = 1.0 / (spec.hrs_nominal * arr.process_hrs * scale)
    return g_lrs, g_hrs


def evaluate(chip: ChipInstance, challenges, temperature: float | None = None,
             rng: np.random.Generator | None = None, write_back: bool = True) -> np.ndarray:
    """Raw responses for a batch of challenges, one full evaluation each.

    Every evaluation resets the array and reprograms the challenge rows, so
    every device ends up with exactly one fresh write-noise draw. Only the
    final device state is kept on the chip when ``write_back`` is set.
    """
    layout, spec = chip.layout, chip.spec
    c = np.atleast_2d(as_bits(challenges))
    if c.shape[-1] != layout.challenge_bits:
        raise ValueError(f"challenge must have {layout.challenge_bits} bits, got {c.shape[-1]}")
    temperature = spec.temp_ambient if temperature is None else float(temperature)
    rng = chip.rng if rng is None else rng
    g_lrs, g_hrs = _base_conductance(chip, temperature)
    lrs_rows = row_pattern(c, layout.puf_rows)
    shape = (layout.puf_blocks, layout.puf_rows, layout.puf_cols)
    out = np.empty((len(c), layout.response_bits), dtype=np.uint8)
    for start in range(0, len(c), _CHUNK):
        mask = lrs_rows[start:start + _CHUNK, None, :, None]
        z = rng.standard_normal((mask.shape[0],) + shape)
        g = np.where(mask, g_lrs, g_hrs) * np.exp(-spec.sigma_c2c * z)
        out[start:start + _CHUNK] = sense_columns(g).reshape(mask.shape[0], -1)
    if write_back and len(c):
        state = np.broadcast_to(lrs_rows[-1][None, :, None], shape)
        chip.puf.state[...] = np.where(state, LRS, HRS)
        chip.puf.noise[...] = np.exp(spec.sigma_c2c * z[-1])
        chip.puf.written[...] = True
    return out


def generate_response(chip: ChipInstance, challenge, ctx: CycleContext | None = None) -> np.ndarray:
    """One time-multiplexed evaluation of all blocks for a single challenge."""
    ctx = chip.context() if ctx is None else ctx
    return evaluate(chip, [as_bits(challenge)], ctx.temperature, ctx.rng)[0]


@dataclass(frozen=True)
class MitigationConfig:
    """Logical countermeasures against modeling attacks.

    ``column_shuffle`` is a base permutation of response positions (None means
    identity); it is rotated by a challenge-derived offset before use.
    """

    enabled: bool = True
    column_shuffle: tuple | None = None
    xor_fold: bool = False

    def __post_init__(self):
        if self.column_shuffle is not None:
            perm = np.asarray(self.column_shuffle)
            if not np.array_equal(np.sort(perm), np.arange(len(perm))):
                raise ValueError("column_shuffle must be a permutation of 0..n-1")

    def permutation(self, width: int) -> np.ndarray:
        if self.column_shuffle is None:
            return np.arange(width)
        if len(self.column_shuffle) != width:
            raise ValueError(f"column_shuffle has {len(self.column_shuffle)} entries, response has {width}")
        return np.asarray(self.column_shuffle)

    def output_bits(self, width: int) -> int:
        return width // 2 if self.enabled and self.xor_fold else width

    def to_json(self) -> dict:
        shuffle = None if self.column_shuffle is None else [int(v) for v in self.column_shuffle]
        return {"enabled": self.enabled, "column_shuffle": shuffle, "xor_fold": self.xor_fold}

    @classmethod
    def from_json(cls, doc: dict) -> "MitigationConfig":
        shuffle = doc.get("column_shuffle")
        return cls(bool(doc.get("enabled", True)), None if shuffle is None else tuple(shuffle),
                   bool(doc.get("xor_fold", False)))


NO_MITIGATION = MitigationConfig(enabled=False)


def shuffle_offset(challenges, width: int) -> np.ndarray:
    """XOR-fold each challenge into log2(width) bits and read it as an integer."""
    k = int(width).bit_length() - 1
    if 1 << k != width:
        raise ValueError("shuffle width must be a power of two")
    c = np.atleast_2d(np.asarray(challenges, dtype=np.uint8))
    if k == 0:
        return np.zeros(len(c), dtype=np.int64)
    pad = (-c.shape[1]) % k
    c = np.pad(c, ((0, 0), (0, pad)))
    folded = np.bitwise_xor.reduce(c.reshape(len(c), -1, k), axis=1)
    return folded.astype(np.int64) @ (1 << np.arange(k - 1, -1, -1))


def apply_mitigations(r, cfg: MitigationConfig, challenges=None) -> np.ndarray:
    """Shuffle response positions (pairs of columns) and optionally XOR-fold.

    Works on a single response or a batch; ``challenges`` supplies the
    per-challenge rotation and may be omitted for a fixed shuffle.
    """
    r = np.asarray(r, dtype=np.uint8)
    if not cfg.enabled:
        return r
    batch = np.atleast_2d(r)
    width = batch.shape[1]
    perm = cfg.permutation(width)
    offset = np.zeros(len(batch), dtype=np.int64) if challenges is None else shuffle_offset(challenges, width)
    idx = perm[(np.arange(width)[None, :] + offset[:, None]) % width]
    out = np.take_along_axis(batch, idx, axis=1)
    if cfg.xor_fold:
        out = out[:, 0::2] ^ out[:, 1::2]
    return out if r.ndim > 1 else out[0]


def respond(chip: ChipInstance, challenges, cfg: MitigationConfig = NO_MITIGATION,
            temperature: float | None = None, rng=None, write_back: bool = True) -> np.ndarray:
    c = np.atleast_2d(as_bits(challenges))
    return apply_mitigations(evaluate(chip, c, temperature, rng, write_back), cfg, c)


def block_schedule(chip_or_layout) -> list[tuple[int, str]]:
    layout = getattr(chip_or_layout, "layout", chip_or_layout)
    return [(b, phase) for b in range(layout.puf_blocks) for phase in PHASES]


def schedule_cycles(schedule) -> float:
    return sum(PHASE_CYCLES[phase] for _, phase in schedule)
