"""
Statistical memristor model shared by every crossbar on a chip.

Resistance of a device is

    nominal(state) * process_factor(state) * write_noise * (1 + tempco * dT)

Process factors are drawn once per device at fabrication; the write noise is
redrawn at every write and frozen until the next one, so reads are pure.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

HRS = 0
LRS = 1

_JSON_KEYS = {
    "hrs_ohm": "hrs_nominal",
    "lrs_ohm": "lrs_nominal",
    "sigma_process": "sigma_process",
    "sigma_c2c": "sigma_c2c",
    "temp_coeff_per_k": "temp_coeff",
    "temp_k": "temp_ambient",
    "sigma_process_nvm": "sigma_process_nvm",
    "tempco_spread_per_k": "tempco_spread",
}


@dataclass(frozen=True)
class VariationSpec:
    """Process, cycle-to-cycle and temperature variation of the memristors.

    ``sigma_process`` is the log-normal spread of the PUF crossbar devices;
    the memory crossbar (NVM and tag array) uses ``sigma_process_nvm``.
    ``tempco_spread`` is the device-to-device standard deviation of the
    temperature coefficient around ``temp_coeff``.
    """

    hrs_nominal: float = 1e6
    lrs_nominal: float = 1e4
    sigma_process: float = 3.5
    sigma_c2c: float = 0.10
    temp_coeff: float = 1e-3
    temp_ambient: float = 300.0
    sigma_process_nvm: float = 0.05
    tempco_spread: float = 5e-3

    def __post_init__(self):
        if not self.hrs_nominal > self.lrs_nominal > 0:
            raise ValueError("need hrs_nominal > lrs_nominal > 0")
        if self.sigma_process < 0 or self.sigma_process_nvm < 0:
            raise ValueError("process sigma must be non-negative")
        if not 0 <= self.sigma_c2c < 1:
            raise ValueError("sigma_c2c must lie in [0, 1)")
        if self.temp_ambient <= 0:
            raise ValueError("temp_ambient must be positive (kelvin)")
        if self.tempco_spread < 0:
            raise ValueError("tempco_spread must be non-negative")

    @property
    def read_threshold(self) -> float:
        """Geometric mean of the nominal states, used by sense circuits."""
        return float(np.sqrt(self.hrs_nominal * self.lrs_nominal))

    def replace(self, **changes) -> "VariationSpec":
        return VariationSpec(**{**asdict(self), **changes})

    def to_json(self) -> dict:
        return {key: getattr(self, attr) for key, attr in _JSON_KEYS.items()}

    @classmethod
    def from_json(cls, doc: dict) -> "VariationSpec":
        unknown = set(doc) - set(_JSON_KEYS)
        if unknown:
            raise ValueError(f"unknown variation keys: {sorted(unknown)}")
        return cls(**{_JSON_KEYS[k]: float(v) for k, v in doc.items()})


@dataclass(frozen=True)
class ChipLayout:
    puf_blocks: int = 4
    puf_rows: int = 64
    puf_cols: int = 16
    nvm_rows: int = 5
    nvm_cols: int = 12

    def __post_init__(self):
        dims = (self.puf_blocks, self.puf_rows, self.puf_cols, self.nvm_rows, self.nvm_cols)
        if min(dims) <= 0:
            raise ValueError(f"layout dimensions must be positive, got {dims}")
        if self.puf_rows % 2 or self.puf_cols % 2:
            raise ValueError("PUF blocks need two rows per challenge bit and two columns per response bit")

    @property
    def challenge_bits(self) -> int:
        return self.puf_rows // 2

    @property
    def response_bits(self) -> int:
        return self.puf_blocks * self.puf_cols // 2


@dataclass
class CycleContext:
    temperature: float
    rng: np.random.Generator


@dataclass
class MemristorDevice:
    process_factor_hrs: float
    process_factor_lrs: float
    state: int = HRS
    tempco: float | None = None  # None -> spec.temp_coeff

    def __post_init__(self):
        if self.process_factor_hrs <= 0 or self.process_factor_lrs <= 0:
            raise ValueError("process factors must be positive")


def resistance(state, process_hrs, process_lrs, noise, tempco, spec: VariationSpec, temperature):
    """Vectorised resistance formula; all array arguments broadcast."""
    nominal = np.where(state == LRS, spec.lrs_nominal, spec.hrs_nominal)
    process = np.where(state == LRS, process_lrs, process_hrs)
    return nominal * process * noise * (1.0 + tempco * (temperature - spec.temp_ambient))


def draw_write_noise(spec: VariationSpec, rng: np.random.Generator, shape=()):
    return np.exp(spec.sigma_c2c * rng.standard_normal(shape))


def effective_resistance(dev: MemristorDevice, spec: VariationSpec, ctx: CycleContext,
                         last_write_noise: float) -> float:
    tempco = spec.temp_coeff if dev.tempco is None else dev.tempco
    return float(resistance(dev.state, dev.process_factor_hrs, dev.process_factor_lrs,
                            last_write_noise, tempco, spec, ctx.temperature))


def write_state(dev: MemristorDevice, target: int, spec: VariationSpec, ctx: CycleContext) -> float:
    """Program ``dev`` to ``target`` and return the freshly drawn write noise."""
    if target not in (HRS, LRS):
        raise ValueError(f"target must be HRS or LRS, got {target!r}")
    dev.state = target
    return float(draw_write_noise(spec, ctx.rng))


@dataclass
class DeviceArray:
    """Struct-of-arrays storage for a crossbar of memristors."""

    process_hrs: np.ndarray
    process_lrs: np.ndarray
    tempco: np.ndarray
    state: np.ndarray = field(default=None)
    noise: np.ndarray = field(default=None)
    written: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = self.process_hrs.shape
        if self.state is None:
            self.state = np.full(shape, HRS, dtype=np.uint8)
        if self.noise is None:
            self.noise = np.ones(shape)
        if self.written is None:
            self.written = np.zeros(shape, dtype=bool)

    @property
    def shape(self):
        return self.process_hrs.shape

    def resistance(self, spec: VariationSpec, temperature: float) -> np.ndarray:
        return resistance(self.state, self.process_hrs, self.process_lrs, self.noise,
                          self.tempco, spec, temperature)

    def conductance_for(self, state, noise, spec: VariationSpec, temperature: float) -> np.ndarray:
        """Conductance the array would have in a hypothetical (state, noise)."""
        return 1.0 / resistance(state, self.process_hrs, self.process_lrs, noise,
                                self.tempco, spec, temperature)

    def write(self, index, target, spec: VariationSpec, rng: np.random.Generator):
        """Write ``target`` (scalar or array) at ``index``; each cell gets fresh noise."""
        target = np.asarray(target, dtype=np.uint8)
        if np.any(target > 1):
            raise ValueError("targets must be HRS(0) or LRS(1)")
        n = np.broadcast_to(self.state[index], np.broadcast_shapes(self.state[index].shape, target.shape))
        self.state[index] = target
        self.noise[index] = draw_write_noise(spec, rng, n.shape)
        self.written[index] = True

    def device(self, index) -> MemristorDevice:
        return MemristorDevice(float(self.process_hrs[index]), float(self.process_lrs[index]),
                               int(self.state[index]), float(self.tempco[index]))


@dataclass
class ChipInstance:
    spec: VariationSpec
    layout: ChipLayout
    seed: int
    puf: DeviceArray
    nvm: DeviceArray
    tag_loads: np.ndarray  # per-column load resistor, ohm
    rng: np.random.Generator  # runtime write-noise stream
    screen_entropy: int

    def context(self, temperature: float | None = None) -> CycleContext:
        if temperature is None:
            temperature = self.spec.temp_ambient
        return CycleContext(float(temperature), self.rng)


def _draw_array(spec, sigma, shape, rng) -> DeviceArray:
    process_hrs = np.exp(sigma * rng.standard_normal(shape))
    process_lrs = np.exp(sigma * rng.standard_normal(shape))
    tempco = spec.temp_coeff + spec.tempco_spread * rng.standard_normal(shape)
    return DeviceArray(process_hrs, process_lrs, tempco)


def sample_chip(spec: VariationSpec, layout: ChipLayout, seed: int) -> ChipInstance:
    """Fabricate one chip; identical ``seed`` gives a bit-identical chip."""
    fab, runtime, screen = np.random.SeedSequence(int(seed)).spawn(3)
    rng = np.random.default_rng(fab)
    puf = _draw_array(spec, spec.sigma_process,
                      (layout.puf_blocks, layout.puf_rows, layout.puf_cols), rng)
    nvm = _draw_array(spec, spec.sigma_process_nvm, (layout.nvm_rows, layout.nvm_cols), rng)
    loads = spec.read_threshold * np.exp(spec.sigma_process_nvm * rng.standard_normal(layout.nvm_cols))
    return ChipInstance(spec, layout, int(seed), puf, nvm, loads,
                        np.random.default_rng(runtime), int(screen.generate_state(1)[0]))


def trial_seed(master: int, *keys: int) -> int:
    """Independent 64-bit seed for one Monte Carlo trial of a campaign."""
    state = np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])
