"""
Adversary models against the backup system: spoofing by rewriting the data
cells, replay of an old image, passive reads of the NVM, and machine-learning
modeling of the PUF from challenge-response pairs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import xbarpuf
from .nvm import DATA, write_bits
from .otp import UniformityResult, bit_uniformity
from .protocol import TAG_MISMATCH, SecureBackupSystem, State
from .tag import generate_tag
from .trng import RandomSource

log = logging.getLogger(__name__)


@dataclass
class AttackOutcome:
    kind: str
    trials: int
    successes: int

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in [0, trials]")

    @property
    def probability(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def spoofing_success_prob(tag_bits: int, trials: int) -> float:
    """Chance that at least one of ``trials`` random rewrites reproduces the tag."""
    if trials < 0:
        raise ValueError("trials must be >= 0")
    return 1.0 - (1.0 - 2.0 ** -tag_bits) ** trials


def spoof_attempts(system: SecureBackupSystem, trials: int, rng: np.random.Generator) -> int:
    """Rewrite the data cells up to ``trials`` times until the stored tag matches.

    Returns the 1-based index of the first matching attempt, or 0 if none
    matched. With timestamp refresh on, a failed check flushes the backup, so
    only the first attempt can succeed.
    """
    if system.state != State.POWERED_DOWN or "tag" not in system.image.secure:
        raise ValueError("spoofing needs a powered-down system holding a tag")
    stored = system.image.secure["tag"]
    n = system.nvm_layout.size(DATA)
    for i in range(1, trials + 1):
        write_bits(system.chip, system.nvm_layout, DATA, rng.integers(0, 2, n))
        if np.array_equal(generate_tag(system.chip, system.nvm_layout, system.config.tag), stored):
            return i
        if system.timestamp_refresh:
            return 0
    return 0


def run_spoofing(system: SecureBackupSystem, trials: int, seed: int) -> AttackOutcome:
    rng = np.random.default_rng(seed)
    hit = spoof_attempts(system, trials, rng) if trials else 0
    return AttackOutcome("spoof", 1, int(hit > 0))


def replay_attack(system: SecureBackupSystem, old_image: dict, restore_after: bool = True,
                  secure_access: bool = True) -> bool:
    """Write an old snapshot's data (and, with ``secure_access``, its tag and
    challenge) back and try to restore.

    Cells whose digital value already matches are left untouched, which is
    the most favourable case for the attacker. Returns True iff rejected.
    """
    if system.state != State.POWERED_DOWN:
        raise ValueError("replay needs a powered-down system")
    names = ("data", "tag", "challenge") if secure_access else ("data",)
    keep = {k: old_image[k] for k in names if k in old_image}
    system.image.load(keep, skip_unchanged=True)
    if not restore_after:
        return False
    result = system.secure_restore()
    return not result.restored


def mutual_information(x, y) -> float:
    """Plug-in estimate in bits between two binary sample vectors."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    joint = np.bincount(2 * x + y, minlength=4).reshape(2, 2) / len(x)
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log2(joint[nz] / np.outer(px, py)[nz])))


def mean_bitwise_mi(plain, cipher) -> float:
    plain, cipher = np.asarray(plain), np.asarray(cipher)
    return float(np.mean([mutual_information(plain[:, k], cipher[:, k]) for k in range(plain.shape[1])]))


@dataclass
class LeakageReport:
    uniformity: UniformityResult
    mutual_information: float
    trials: int


def malicious_read(system: SecureBackupSystem, trials: int, seed: int,
                   fixed_plaintext=None) -> LeakageReport:
    """Attacker dumps the NVM after each backup.

    Uniformity is tested on ciphertexts of one fixed plaintext; mutual
    information is estimated between random plaintexts and their ciphertexts.
    Only valid backups leave a ciphertext behind.
    """
    rng = np.random.default_rng(seed)
    n = system.nvm_layout.size(DATA)
    fixed = rng.integers(0, 2, n) if fixed_plaintext is None else np.asarray(fixed_plaintext)

    def leak(data):
        rep = system.secure_backup(data)
        dump = system.image.snapshot() if rep.key_valid else None
        system.secure_restore()
        return None if dump is None else np.array([int(b) for b in dump["data"]], dtype=np.uint8)

    fixed_ct = [c for c in (leak(fixed) for _ in range(trials)) if c is not None]
    plains, ciphers = [], []
    for _ in range(trials):
        p = rng.integers(0, 2, n)
        c = leak(p)
        if c is not None:
            plains.append(p)
            ciphers.append(c)
    return LeakageReport(bit_uniformity(np.array(fixed_ct)), mean_bitwise_mi(plains, ciphers), trials)


# modeling attack

@dataclass
class CrpDataset:
    challenges: np.ndarray
    responses: np.ndarray  # one target bit per challenge
    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        keys = {c.tobytes() for c in np.asarray(self.challenges, dtype=np.uint8)}
        if len(keys) != len(self.challenges):
            raise ValueError("challenges must be unique")


def harvest_crps(chip, count: int, seed: int, mitigation: xbarpuf.MitigationConfig = xbarpuf.NO_MITIGATION,
                 bit: int = 0, train_fraction: float = 2 / 3) -> CrpDataset:
    """Collect ``count`` unique random challenges and response bit ``bit``."""
    if count < 2:
        raise ValueError("need at least two CRPs")
    src = RandomSource.seeded(seed)
    width = chip.layout.challenge_bits
    seen, rows = set(), []
    while len(rows) < count:
        c = src.next_bits(width)
        if c.tobytes() not in seen:
            seen.add(c.tobytes())
            rows.append(c)
    challenges = np.array(rows)
    rng = np.random.default_rng([seed, 1])
    responses = xbarpuf.respond(chip, challenges, mitigation, rng=rng, write_back=False)[:, bit]
    order = rng.permutation(count)
    n_train = int(round(train_fraction * count))
    return CrpDataset(challenges, responses, np.sort(order[:n_train]), np.sort(order[n_train:]))


def features(challenges, kind: str = "parity") -> np.ndarray:
    """Learner inputs with a bias column.

    parity: phi_i = prod_{j >= i} (1 - 2 c_j), the usual arbiter-PUF transform.
    raw: 1 - 2 c_i.
    """
    s = 1.0 - 2.0 * np.asarray(challenges, dtype=float)
    if kind == "parity":
        s = np.cumprod(s[:, ::-1], axis=1)[:, ::-1]
    elif kind != "raw":
        raise ValueError(f"unknown feature kind {kind!r}")
    return np.hstack([s, np.ones((len(s), 1))])


def _check_labels(y):
    if np.all(y == y[0]):
        log.warning("all training responses are equal; the model is a constant")


def logistic_regression(x, y, steps: int = 3000, lr: float = 0.5, l2: float = 1e-4) -> np.ndarray:
    """Full-batch gradient descent on the mean logistic loss."""
    _check_labels(y)
    w = np.zeros(x.shape[1])
    for _ in range(steps):
        z = np.clip(x @ w, -30, 30)
        grad = x.T @ (1 / (1 + np.exp(-z)) - y) / len(y) + l2 * w
        w -= lr * grad
    return w


def perceptron(x, y, epochs: int = 50, seed: int = 0) -> np.ndarray:
    _check_labels(y)
    rng = np.random.default_rng(seed)
    w = np.zeros(x.shape[1])
    target = 2.0 * y - 1
    for _ in range(epochs):
        for i in rng.permutation(len(y)):
            if target[i] * (x[i] @ w) <= 0:
                w += target[i] * x[i]
    return w


def _predict(x, w, y_train):
    z = x @ w
    if not np.any(w):
        # untrained weights: predict the majority training label
        return np.full(len(x), int(2 * y_train.sum() >= len(y_train)))
    return (z > 0).astype(int)


def train_model(ds: CrpDataset, learner: str = "logistic_regression", feature_kind: str = "parity"):
    """Fit on the training split; returns (train_accuracy, test_accuracy)."""
    x = features(ds.challenges, feature_kind)
    y = np.asarray(ds.responses, dtype=float)
    xt, yt = x[ds.train], y[ds.train]
    if learner == "logistic_regression":
        w = logistic_regression(xt, yt)
    elif learner == "perceptron":
        w = perceptron(xt, yt)
    else:
        raise ValueError(f"unknown learner {learner!r}")
    acc = [float(np.mean(_predict(x[idx], w, yt) == y[idx])) for idx in (ds.train, ds.test)]
    return acc[0], acc[1]


def model_attack(chip, mitigation, count: int = 5000, seed: int = 0, learner: str = "logistic_regression",
                 feature_kind: str = "parity", bit: int = 0):
    return train_model(harvest_crps(chip, count, seed, mitigation, bit), learner, feature_kind)
