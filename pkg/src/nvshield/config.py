"""Experiment configuration loaded from JSON, with calibrated defaults."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources

from .device import ChipLayout, VariationSpec
from .protocol import SystemConfig
from .reliability import KeyExtractionParams
from .tag import TagConfig
from .xbarpuf import MitigationConfig


class ConfigError(ValueError):
    pass


def calibrated_variation() -> VariationSpec:
    """VariationSpec stored in the package's calibration artifact."""
    doc = json.loads(resources.files("nvshield").joinpath("data/calibrated.json").read_text())
    return VariationSpec.from_json(doc["variation"])


def _dataclass_from(cls, doc, what):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what}: {exc}") from exc


def _as_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


@dataclass
class ExperimentConfig:
    experiment: str = ""
    seed: int = 0
    variation: VariationSpec = field(default_factory=calibrated_variation)
    layout: ChipLayout = field(default_factory=ChipLayout)
    tag: TagConfig = field(default_factory=TagConfig)
    key: KeyExtractionParams = field(default_factory=KeyExtractionParams)
    mitigation: MitigationConfig = field(default_factory=MitigationConfig)
    system: dict = field(default_factory=dict)  # extra SystemConfig fields
    trials: dict = field(default_factory=dict)  # per-subcommand counts
    output: str = "out"

    _SYSTEM_KEYS = ("data_blocks", "timestamp_bits", "access_width", "screen_samples", "p_threshold",
                    "tag_calibration_trials")

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        unknown = set(self.system) - set(self._SYSTEM_KEYS)
        if unknown:
            raise ConfigError(f"unknown system keys: {sorted(unknown)}")
        for name, value in self.trials.items():
            if isinstance(value, bool):
                raise ConfigError(f"trials.{name} must be numeric")
            items = value if isinstance(value, list) else [value]
            for v in items:
                if not isinstance(v, (int, float)) or v < 0:
                    raise ConfigError(f"trials.{name} must be non-negative numbers")
            if isinstance(value, int) and value < 1 and name not in ("delta_t",):
                raise ConfigError(f"trials.{name} must be >= 1")

    def count(self, name: str, default):
        return self.trials.get(name, default)

    def system_config(self) -> SystemConfig:
        try:
            return SystemConfig(spec=self.variation, layout=self.layout, tag=self.tag, key=self.key,
                                mitigation=self.mitigation, **self.system)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad system configuration: {exc}") from exc

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"experiment", "seed", "variation", "layout", "tag", "key", "mitigation", "system",
                   "trials", "output"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "variation" in doc:
            base = calibrated_variation().to_json()
            if not isinstance(doc["variation"], dict):
                raise ConfigError("variation must be a JSON object")
            try:
                kw["variation"] = VariationSpec.from_json({**base, **doc["variation"]})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad variation: {exc}") from exc
        kw["layout"] = _dataclass_from(ChipLayout, doc.get("layout"), "layout")
        kw["tag"] = _dataclass_from(TagConfig, doc.get("tag"), "tag")
        kw["key"] = _dataclass_from(KeyExtractionParams, doc.get("key"), "key")
        if "mitigation" in doc:
            try:
                kw["mitigation"] = MitigationConfig.from_json(doc["mitigation"])
            except (TypeError, ValueError, AttributeError) as exc:
                raise ConfigError(f"bad mitigation: {exc}") from exc
        for name in ("experiment", "seed", "system", "trials", "output"):
            if name in doc:
                kw[name] = doc[name]
        for name, typ in (("system", dict), ("trials", dict), ("experiment", str), ("output", str)):
            if name in kw and not isinstance(kw[name], typ):
                raise ConfigError(f"{name} has the wrong type")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(doc)

    def to_json(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "variation": self.variation.to_json(),
                "layout": _as_dict(self.layout), "tag": _as_dict(self.tag), "key": _as_dict(self.key),
                "mitigation": self.mitigation.to_json(), "system": dict(sorted(self.system.items())),
                "trials": dict(sorted(self.trials.items())), "output": self.output}
