"""
Backup/restore state machine: PUF key generation, OTP encryption into the NVM
crossbar, timestamp refresh and sneak-path tag, plus clock-cycle accounting.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import xbarpuf
from .bits import as_bits, bits_to_int, bits_to_str
from .device import ChipLayout, VariationSpec, sample_chip, trial_seed
from .nvm import DATA, NvmImage, NvmLayout, format_nvm, read_bits, read_cycles, write_bits
from .otp import decrypt, encrypt
from .reliability import KeyExtractionParams, extract_key, screening_mask
from .tag import TagConfig, calibrate_reference, generate_tag, randomize_timestamp
from .trng import RandomSource


class State(enum.Enum):
    IDLE = "Idle"
    BACKUP_PUF_PASS1 = "Backup_PufPass1"
    BACKUP_PUF_PASS2 = "Backup_PufPass2"
    KEY_AND_ENCRYPT = "KeyAndEncrypt"
    TAG_GENERATE = "TagGenerate"
    POWERED_DOWN = "PoweredDown"
    RESTORE_TAG_CHECK = "Restore_TagCheck"
    RESTORE_PUF_PASS1 = "Restore_PufPass1"
    RESTORE_PUF_PASS2 = "Restore_PufPass2"
    RESTORE_DECRYPT = "Restore_Decrypt"
    REJECTED = "Rejected"
    RESTORED = "Restored"


S = State
TRANSITIONS = {
    S.IDLE: {S.BACKUP_PUF_PASS1, S.POWERED_DOWN},
    S.BACKUP_PUF_PASS1: {S.BACKUP_PUF_PASS2},
    S.BACKUP_PUF_PASS2: {S.KEY_AND_ENCRYPT},
    S.KEY_AND_ENCRYPT: {S.TAG_GENERATE, S.POWERED_DOWN},  # invalid key aborts
    S.TAG_GENERATE: {S.POWERED_DOWN},
    S.POWERED_DOWN: {S.RESTORE_TAG_CHECK},
    S.RESTORE_TAG_CHECK: {S.RESTORE_PUF_PASS1, S.REJECTED},
    S.RESTORE_PUF_PASS1: {S.RESTORE_PUF_PASS2},
    S.RESTORE_PUF_PASS2: {S.RESTORE_DECRYPT},
    S.RESTORE_DECRYPT: {S.RESTORED, S.REJECTED},
    S.REJECTED: {S.IDLE},
    S.RESTORED: {S.IDLE},
}

# hardware block enabled in each state; at most one at any time
BLOCK_OF_STATE = {
    S.BACKUP_PUF_PASS1: "puf", S.BACKUP_PUF_PASS2: "puf",
    S.KEY_AND_ENCRYPT: "rram", S.TAG_GENERATE: "tag",
    S.RESTORE_TAG_CHECK: "tag", S.RESTORE_PUF_PASS1: "puf",
    S.RESTORE_PUF_PASS2: "puf", S.RESTORE_DECRYPT: "rram",
}

TAG_CYCLES = 3
SRAM_CYCLES = 0  # double-sampling SRAM writes overlap the PUF read phase
TAG_MISMATCH = "TagMismatch"
INVALID_KEY = "InvalidKey"


class IllegalTransition(AssertionError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    spec: VariationSpec = VariationSpec()
    layout: ChipLayout = ChipLayout()
    tag: TagConfig = TagConfig()
    key: KeyExtractionParams = KeyExtractionParams()
    mitigation: xbarpuf.MitigationConfig = xbarpuf.MitigationConfig()
    data_blocks: int = 1
    timestamp_bits: int = 8
    access_width: int = 1
    screen_samples: int = 500  # test-time evaluations per challenge; 0 disables screening
    p_threshold: float = 1.0
    tag_calibration_trials: int = 2000

    def nvm_layout(self) -> NvmLayout:
        return NvmLayout(access_width=self.access_width).with_data_bits(
            self.key.nKey * self.data_blocks, self.timestamp_bits)


@dataclass
class BackupReport:
    key_valid: bool
    x: int  # discarded positions summed over blocks
    cycles: dict
    nvm_image: NvmImage | None
    per_block_x: list = field(default_factory=list)

    @property
    def total_cycles(self) -> float:
        return cycle_cost(self)


@dataclass
class RestoreResult:
    outcome: str  # "Restored" or "Rejected"
    reason: str | None
    data: np.ndarray | None
    cycles: dict
    decrypt_attempted: bool = False

    @property
    def restored(self) -> bool:
        return self.outcome == "Restored"

    @property
    def total_cycles(self) -> float:
        return cycle_cost(self)


def cycle_cost(report) -> float:
    return float(sum(report.cycles.values()))


def puf_cycles(activations: int, layout: ChipLayout) -> dict:
    """Cycles of ``activations`` PUF passes (each pass activates every block)."""
    out = {f"puf_{phase}": 0.0 for phase in xbarpuf.PHASES}
    for _, phase in xbarpuf.block_schedule(layout) * activations:
        out[f"puf_{phase}"] += xbarpuf.PHASE_CYCLES[phase]
    return out


class SecureBackupSystem:
    """One chip with its PUF, NVM crossbar, tag circuit and protocol controller."""

    def __init__(self, chip, config: SystemConfig, trng: RandomSource):
        self.chip = chip
        self.config = config
        self.trng = trng
        self.timestamp_src = trng
        self.nvm_layout = config.nvm_layout()
        self.nvm_layout.check_fits(chip.nvm.shape)
        self.image = NvmImage(chip, self.nvm_layout)
        self.state = S.IDLE
        self.enabled_blocks: set = set()
        self.log: list = []
        self.volatile_data = None
        self.backup_valid = False
        self.timestamp_refresh = config.timestamp_bits > 0
        self._screen_cache: dict = {}
        self.counters = {"decrypt_calls": 0}

    @classmethod
    def build(cls, config: SystemConfig = SystemConfig(), seed: int = 0, trng: RandomSource | None = None):
        chip = sample_chip(config.spec, config.layout, trial_seed(seed, 0))
        format_nvm(chip)
        tag_cfg = config.tag
        if tag_cfg.reference_threshold is None:
            tag_cfg = calibrate_reference(chip, tag_cfg, config.tag_calibration_trials, seed)
        config = replace(config, tag=tag_cfg)
        trng = RandomSource.seeded(trial_seed(seed, 1)) if trng is None else trng
        return cls(chip, config, trng)

    # state handling

    def _enter(self, new: State, note: str = "", cycles: float = 0.0):
        if new not in TRANSITIONS[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new.value}")
        self.enabled_blocks.discard(BLOCK_OF_STATE.get(self.state))
        block = BLOCK_OF_STATE.get(new)
        if block is not None:
            self.enabled_blocks.add(block)
        assert len(self.enabled_blocks) <= 1, "two security blocks enabled at once"
        self.log.append({"from": self.state.value, "to": new.value, "cycles": cycles, "note": note})
        self.state = new

    # key generation

    def _screen(self, challenge) -> np.ndarray | None:
        n = self.config.screen_samples
        if n == 0:
            return None
        cid = bits_to_int(challenge)
        if cid not in self._screen_cache:
            rng = np.random.default_rng([self.chip.screen_entropy, cid])
            resp = xbarpuf.respond(self.chip, np.tile(challenge, (n, 1)), self.config.mitigation,
                                   rng=rng, write_back=False)
            self._screen_cache[cid] = screening_mask(resp)
        return self._screen_cache[cid]

    def _puf_pass(self, challenge, temperature) -> np.ndarray:
        return xbarpuf.respond(self.chip, challenge, self.config.mitigation, temperature)[0]

    def _keys(self, challenges, temperature, first: State, second: State):
        """Two PUF passes over all challenges, then all-agree extraction per block."""
        per_pass = xbarpuf.schedule_cycles(xbarpuf.block_schedule(self.config.layout)) * len(challenges)
        self._enter(first, cycles=per_pass)
        pass1 = [self._puf_pass(c, temperature) for c in challenges]
        self._enter(second, cycles=per_pass)
        pass2 = [self._puf_pass(c, temperature) for c in challenges]
        params = replace(self.config.key, resp=len(pass1[0]))
        return [extract_key(np.stack([a, b]), params, self._screen(c))
                for a, b, c in zip(pass1, pass2, challenges)]

    # protocol operations

    def secure_backup(self, data, temperature: float | None = None) -> BackupReport:
        data = as_bits(data, self.config.key.nKey * self.config.data_blocks)
        if self.state in (S.RESTORED, S.REJECTED):
            self._enter(S.IDLE, "resume")
        if self.state != S.IDLE:
            raise IllegalTransition(f"backup requested in state {self.state.value}")
        k, n = self.config.data_blocks, self.config.key.nKey
        challenges = [self.trng.next_bits(self.config.layout.challenge_bits) for _ in range(k)]
        cycles = puf_cycles(2 * k, self.config.layout)
        cycles["sram"] = SRAM_CYCLES
        keys = self._keys(challenges, temperature, S.BACKUP_PUF_PASS1, S.BACKUP_PUF_PASS2)
        xs = [x for _, x in keys]
        if not all(key.valid for key, _ in keys):
            self._enter(S.KEY_AND_ENCRYPT, "invalid key")
            self._enter(S.POWERED_DOWN, "backup aborted")
            self.backup_valid = False
            cycles["rram_write"] = 0
            return BackupReport(False, sum(xs), cycles, None, xs)

        cipher = np.concatenate([encrypt(data[i * n:(i + 1) * n], key) for i, (key, _) in enumerate(keys)])
        write_bits(self.chip, self.nvm_layout, DATA, cipher, skip_unchanged=True)
        cycles["rram_write"] = float(read_cycles(self.nvm_layout, k * n + sum(xs)))
        self._enter(S.KEY_AND_ENCRYPT, cycles=cycles["rram_write"])
        if self.timestamp_refresh:
            randomize_timestamp(self.image, self.timestamp_src)
        self._enter(S.TAG_GENERATE, cycles=TAG_CYCLES)
        self.image.secure["tag"] = generate_tag(self.chip, self.nvm_layout, self.config.tag)
        self.image.secure["challenge"] = np.concatenate(challenges)
        cycles["tag"] = TAG_CYCLES
        self._enter(S.POWERED_DOWN)
        self.backup_valid = True
        self.volatile_data = None
        return BackupReport(True, sum(xs), cycles, self.image, xs)

    def secure_restore(self, available_power: float | None = None,
                       temperature: float | None = None) -> RestoreResult | None:
        """Returns None (and stays put) while available power is below threshold."""
        if available_power is not None and available_power < self.config.p_threshold:
            self.log.append({"from": self.state.value, "to": self.state.value, "cycles": 0,
                             "note": "waiting for power"})
            return None
        if self.state != S.POWERED_DOWN:
            raise IllegalTransition(f"restore requested in state {self.state.value}")
        cycles = {"tag": TAG_CYCLES}
        self._enter(S.RESTORE_TAG_CHECK, cycles=TAG_CYCLES)
        if not self.backup_valid:
            return self._reject(INVALID_KEY, cycles)
        stored = self.image.secure.get("tag")
        if stored is None or not np.array_equal(generate_tag(self.chip, self.nvm_layout, self.config.tag), stored):
            return self._reject(TAG_MISMATCH, cycles)

        k, n = self.config.data_blocks, self.config.key.nKey
        challenges = np.asarray(self.image.secure["challenge"]).reshape(k, -1)
        cycles.update(puf_cycles(2 * k, self.config.layout))
        keys = self._keys(list(challenges), temperature, S.RESTORE_PUF_PASS1, S.RESTORE_PUF_PASS2)
        cycles["rram_read"] = float(read_cycles(self.nvm_layout, k * n))
        self._enter(S.RESTORE_DECRYPT, cycles=cycles["rram_read"])
        if not all(key.valid for key, _ in keys):
            return self._reject(INVALID_KEY, cycles, from_decrypt=True)
        cipher = read_bits(self.chip, self.nvm_layout, DATA)
        self.counters["decrypt_calls"] += 1
        data = np.concatenate([decrypt(cipher[i * n:(i + 1) * n], key) for i, (key, _) in enumerate(keys)])
        self._enter(S.RESTORED)
        self.volatile_data = data
        return RestoreResult("Restored", None, data, cycles, True)

    def _reject(self, reason, cycles, from_decrypt=False):
        if reason == TAG_MISMATCH:
            # data is flushed and the processor cold-restarts
            self.backup_valid = False
        self._enter(S.REJECTED, reason)
        self.volatile_data = None
        return RestoreResult("Rejected", reason, None, cycles, False)


# power traces

EVENT_KINDS = ("SetData", "LowPowerWarning", "PowerFail", "PowerRestored")


@dataclass(frozen=True)
class PowerEvent:
    kind: str
    available_power: float | None = None
    data: str | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "PowerRestored" and self.available_power is None:
            raise ValueError("PowerRestored needs available_power")
        if self.kind == "SetData" and self.data is None:
            raise ValueError("SetData needs data")

    @classmethod
    def from_json(cls, doc: dict) -> "PowerEvent":
        if not isinstance(doc, dict) or "kind" not in doc:
            raise ValueError(f"malformed trace event: {doc!r}")
        unknown = set(doc) - {"kind", "available_power", "data"}
        if unknown:
            raise ValueError(f"unknown event fields {sorted(unknown)}")
        return cls(doc["kind"], doc.get("available_power"), doc.get("data"))


def run_power_trace(system: SecureBackupSystem, events) -> list[dict]:
    """Replay power events through the state machine; returns per-event records."""
    events = [e if isinstance(e, PowerEvent) else PowerEvent.from_json(e) for e in events]
    records = []
    for i, ev in enumerate(events):
        start = len(system.log)
        rec = {"event": i, "kind": ev.kind, "state_before": system.state.value}
        if ev.kind == "SetData":
            if system.state not in (S.IDLE, S.RESTORED, S.REJECTED):
                raise ValueError(f"event {i}: data can only change while running")
            system.volatile_data = as_bits(ev.data)
            rec["result"] = "data set"
        elif ev.kind == "LowPowerWarning":
            if system.state == S.POWERED_DOWN:
                rec["result"] = "ignored"
            else:
                if system.volatile_data is None:
                    raise ValueError(f"event {i}: no volatile data to back up")
                rep = system.secure_backup(system.volatile_data)
                rec.update(result="backup" if rep.key_valid else "backup aborted",
                           x=rep.x, cycles=rep.cycles, total_cycles=rep.total_cycles)
        elif ev.kind == "PowerFail":
            if system.state in (S.IDLE, S.RESTORED, S.REJECTED):
                if system.state != S.IDLE:
                    system._enter(S.IDLE, "resume")
                system._enter(S.POWERED_DOWN, "power lost without backup")
                system.backup_valid = False
                system.volatile_data = None
                rec["result"] = "lost"
            else:
                rec["result"] = "off"
        else:
            if system.state != S.POWERED_DOWN:
                rec["result"] = "ignored"
            else:
                res = system.secure_restore(ev.available_power)
                if res is None:
                    rec["result"] = "waiting"
                else:
                    rec.update(result=res.outcome, reason=res.reason, cycles=res.cycles,
                               total_cycles=res.total_cycles)
                    if res.restored:
                        rec["data"] = bits_to_str(res.data)
        rec["transitions"] = system.log[start:]
        rec["state_after"] = system.state.value
        records.append(rec)
    return records


def load_trace(path) -> list[PowerEvent]:
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc.get("events")
    if not isinstance(doc, list):
        raise ValueError("trace must be a JSON list of events or {'events': [...]}")
    return [PowerEvent.from_json(e) for e in doc]
