"""
Resistive NVM crossbar and the persistent image of a backup.

Cells are addressed row-major over the NVM crossbar. The data and timestamp
regions live in the crossbar and are covered by the integrity tag; the
challenge and tag are kept in a separate secure store.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bits import as_bits, bits_to_str
from .device import HRS, LRS, ChipInstance

DATA = "data"
TIMESTAMP = "timestamp"


@dataclass(frozen=True)
class NvmLayout:
    regions: dict = field(default_factory=lambda: {DATA: (0, 16), TIMESTAMP: (16, 8)})
    access_width: int = 1  # bits per read/write cycle

    def __post_init__(self):
        if self.access_width < 1:
            raise ValueError("access_width must be >= 1")
        spans = sorted((start, start + length, name) for name, (start, length) in self.regions.items())
        for start, stop, name in spans:
            if start < 0 or stop < start:
                raise ValueError(f"region {name!r} has an invalid span")
        for (_, stop_a, a), (start_b, _, b) in zip(spans, spans[1:]):
            if start_b < stop_a:
                raise ValueError(f"regions {a!r} and {b!r} overlap")

    def cells(self, name: str) -> np.ndarray:
        if name not in self.regions:
            raise KeyError(f"unknown region {name!r}")
        start, length = self.regions[name]
        return np.arange(start, start + length)

    def size(self, name: str) -> int:
        return self.regions[name][1] if name in self.regions else 0

    def check_fits(self, shape):
        total = shape[0] * shape[1]
        end = max((s + n for s, n in self.regions.values()), default=0)
        if end > total:
            raise ValueError(f"layout needs {end} cells, the NVM crossbar has {total}")

    def with_data_bits(self, n: int, timestamp_bits: int | None = None) -> "NvmLayout":
        ts = self.size(TIMESTAMP) if timestamp_bits is None else timestamp_bits
        return NvmLayout({DATA: (0, n), TIMESTAMP: (n, ts)}, self.access_width)


def _flat_index(chip: ChipInstance, cells):
    return np.unravel_index(cells, chip.nvm.shape)


def write_cells(chip: ChipInstance, cells, bits, skip_unchanged: bool = False) -> int:
    """Program cells (flat indices) to ``bits``; returns how many were physically written."""
    cells = np.asarray(cells)
    bits = as_bits(bits)
    if bits.shape != cells.shape:
        raise ValueError(f"{bits.size} bits for {cells.size} cells")
    if cells.size and (cells.min() < 0 or cells.max() >= chip.nvm.state.size):
        raise ValueError("cell index outside the NVM crossbar")
    if skip_unchanged:
        keep = chip.nvm.written.ravel()[cells] & (chip.nvm.state.ravel()[cells] == bits)
        cells, bits = cells[~keep], bits[~keep]
    if cells.size:
        chip.nvm.write(_flat_index(chip, cells), np.where(bits == 1, LRS, HRS), chip.spec, chip.rng)
    return int(cells.size)


def write_bits(chip: ChipInstance, layout: NvmLayout, region: str, bits,
               skip_unchanged: bool = False) -> int:
    """Write a whole region; returns the write cycles spent at the layout's access width."""
    bits = as_bits(bits)
    cells = layout.cells(region)
    if bits.size > cells.size:
        raise ValueError(f"{bits.size} bits overflow region {region!r} of {cells.size} cells")
    if bits.size < cells.size:
        raise ValueError(f"region {region!r} needs {cells.size} bits, got {bits.size}")
    write_cells(chip, cells, bits, skip_unchanged)
    return -(-bits.size // layout.access_width)


def read_cells(chip: ChipInstance, cells, temperature: float | None = None) -> np.ndarray:
    cells = np.asarray(cells)
    idx = _flat_index(chip, cells)
    if not chip.nvm.written[idx].all():
        raise ValueError("reading cells that were never written")
    temperature = chip.spec.temp_ambient if temperature is None else temperature
    r = chip.nvm.resistance(chip.spec, temperature)[idx]
    return (r < chip.spec.read_threshold).astype(np.uint8)


def read_bits(chip: ChipInstance, layout: NvmLayout, region: str,
              temperature: float | None = None) -> np.ndarray:
    return read_cells(chip, layout.cells(region), temperature)


def read_cycles(layout: NvmLayout, nbits: int) -> int:
    return -(-nbits // layout.access_width)


def format_nvm(chip: ChipInstance):
    """Provisioning: bring every NVM cell to a defined HRS state."""
    write_cells(chip, np.arange(chip.nvm.state.size), np.zeros(chip.nvm.state.size, dtype=np.uint8))


@dataclass
class NvmImage:
    """Persistent backup state: crossbar regions on the chip plus the secure store."""

    chip: ChipInstance
    layout: NvmLayout
    secure: dict = field(default_factory=dict)  # "challenge" / "tag" -> bit arrays

    def region(self, name: str) -> np.ndarray:
        return read_bits(self.chip, self.layout, name)

    def snapshot(self) -> dict:
        """Digital contents of every region (what an attacker can read)."""
        out = {name: bits_to_str(self.region(name)) for name in self.layout.regions
               if self.layout.size(name) and self.chip.nvm.written.ravel()[self.layout.cells(name)].all()}
        out.update({k: bits_to_str(v) for k, v in self.secure.items()})
        return out

    def dumps(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)

    def load(self, doc, skip_unchanged: bool = True):
        """Write a snapshot back (attacker-style restore of old contents)."""
        if isinstance(doc, str):
            doc = json.loads(doc)
        for name, value in doc.items():
            if name in self.layout.regions:
                write_bits(self.chip, self.layout, name, value, skip_unchanged)
            else:
                self.secure[name] = as_bits(value)
