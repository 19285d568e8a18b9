"""
Monte Carlo campaigns behind the CLI subcommands and the acceptance suite.

Every campaign is a pure function of its arguments and master seed. Work is
split into independent items with their own derived seeds, mapped over a
thread pool and merged in item order, so results do not depend on the number
of threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import attacks, metrics, reliability, xbarpuf
from .device import ChipLayout, VariationSpec, sample_chip, trial_seed
from .nvm import DATA, write_cells
from .protocol import SecureBackupSystem, SystemConfig
from .tag import TagConfig, calibrate_reference
from .trng import RandomSource

# stream ids for trial_seed
_CHALLENGES, _CHIPS, _SYSTEMS, _DATA, _ATTACK = range(5)


def thread_count() -> int:
    raw = os.environ.get("NVSHIELD_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    n = int(raw)
    if n < 1:
        raise ValueError("NVSHIELD_THREADS must be >= 1")
    return n


def parallel_map(fn, items, threads: int | None = None) -> list:
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def challenge_set(seed: int, count: int, width: int = 32) -> np.ndarray:
    src = RandomSource.seeded(trial_seed(seed, _CHALLENGES))
    return np.array([src.next_bits(width) for _ in range(count)])


def chip_for(spec, layout, seed, k):
    return sample_chip(spec, layout, trial_seed(seed, _CHIPS, k))


# voting

def voting_curves(seed: int, Ns=(1, 2, 4, 8, 16), ps=None, trials: int = 100_000) -> list[dict]:
    ps = np.round(np.arange(0, 101) * 0.01, 2) if ps is None else np.asarray(ps)
    jobs = [(i, float(p), int(N), scheme) for i, (p, N, scheme) in enumerate(
        (p, N, s) for N in Ns for s in (reliability.ALL_AGREE, reliability.MAJORITY) for p in ps)
        if not (scheme == reliability.MAJORITY and N % 2 == 0)]

    def run(job):
        i, p, N, scheme = job
        if scheme == reliability.ALL_AGREE:
            analytic = reliability.all_agree_undetected_prob(p, N)
        else:
            analytic = reliability.majority_correct_prob(p, N)
        empirical = reliability.simulate_voting(p, N, scheme, trials, trial_seed(seed, i))
        return {"p": p, "N": N, "scheme": scheme, "analytic": analytic, "empirical": empirical}

    return parallel_map(run, jobs)


# PUF metrics

def puf_metrics(spec: VariationSpec, seed: int, chips: int = 500, challenges: int = 25,
                layout: ChipLayout = ChipLayout(),
                mitigation: xbarpuf.MitigationConfig = xbarpuf.MitigationConfig()) -> dict:
    """Inter-chip and cross-challenge metrics from one evaluation per (chip, challenge)."""
    cset = challenge_set(seed, challenges, layout.challenge_bits)

    def run(k):
        chip = chip_for(spec, layout, seed, k)
        raw = xbarpuf.evaluate(chip, cset)
        return raw, xbarpuf.apply_mitigations(raw, mitigation, cset)

    out = parallel_map(run, range(chips))
    raw = np.stack([r for r, _ in out])  # (chips, challenges, L)
    resp = np.stack([m for _, m in out])
    uniq = [metrics.uniqueness(resp[:, j]) for j in range(challenges)]
    alias = np.array([metrics.bit_aliasing(resp[:, j]).values for j in range(challenges)])
    summary = {
        "uniqueness": metrics.MetricReport("uniqueness", [u.mean for u in uniq]),
        "uniformity": metrics.MetricReport("uniformity", resp.mean(axis=2).ravel()),
        "bit_aliasing": metrics.MetricReport("bit_aliasing", resp.mean(axis=(0, 1))),
        "bit_aliasing_per_challenge": metrics.MetricReport("bit_aliasing_per_challenge", alias.ravel()),
        "diffuseness": metrics.MetricReport("diffuseness", [metrics.diffuseness(r).mean for r in resp]),
        "diffuseness_raw": metrics.MetricReport("diffuseness_raw", [metrics.diffuseness(r).mean for r in raw]),
    }
    return {"summary": summary, "bit_aliasing": alias, "responses": resp}


def reliability_campaign(spec: VariationSpec, seed: int, chips: int = 25, challenges: int = 25,
                         cycles: int = 500, delta_t: float = 50.0,
                         layout: ChipLayout = ChipLayout()) -> dict:
    """Repeated evaluations at ambient + delta_t against the majority response."""
    cset = challenge_set(seed, challenges, layout.challenge_bits)
    temperature = spec.temp_ambient + delta_t

    def run(k):
        chip = chip_for(spec, layout, seed, k)
        rows = []
        for j, c in enumerate(cset):
            r = xbarpuf.evaluate(chip, np.tile(c, (cycles, 1)), temperature)
            rows.append((k, j, metrics.reliability(r).mean, metrics.steadiness(r).mean))
        return rows

    rows = [row for chunk in parallel_map(run, range(chips)) for row in chunk]
    rel = np.array([r[2] for r in rows])
    return {"rows": [{"chip": k, "challenge": j, "reliability": r, "steadiness": s} for k, j, r, s in rows],
            "reliability": metrics.MetricReport("reliability", rel),
            "steadiness": metrics.MetricReport("steadiness", [r[3] for r in rows])}


def clean_bits_campaign(spec: VariationSpec, seed: int, chips: int = 50, challenges: int = 100,
                        c2c_values=(0.02, 0.05, 0.10), delta_t: float = 50.0,
                        key: reliability.KeyExtractionParams = reliability.KeyExtractionParams(),
                        mitigation: xbarpuf.MitigationConfig = xbarpuf.MitigationConfig(),
                        layout: ChipLayout = ChipLayout()) -> list[dict]:
    """Two samples per challenge, one at ambient and one at ambient + delta_t.

    Chips are reused across variation levels (common random numbers).
    """
    cset = challenge_set(seed, challenges, layout.challenge_bits)
    params = replace(key, T=2, resp=mitigation.output_bits(layout.response_bits))
    rows = []
    for sc in c2c_values:
        s = spec.replace(sigma_c2c=sc)

        def run(k):
            chip = chip_for(s, layout, seed, k)
            a = xbarpuf.respond(chip, cset, mitigation, s.temp_ambient)
            b = xbarpuf.respond(chip, cset, mitigation, s.temp_ambient + delta_t)
            clean = (a == b).sum(axis=1)
            keys = [reliability.extract_key(np.stack([x, y]), params) for x, y in zip(a, b)]
            xs = [x for kk, x in keys if kk.valid]
            return clean.mean(), np.mean(xs) if xs else np.nan, sum(not kk.valid for kk, _ in keys)

        per_chip = parallel_map(run, range(chips))
        clean = np.array([c for c, _, _ in per_chip])
        extra = np.array([x for _, x, _ in per_chip])
        rows.append({"sigma_c2c": sc, "delta_t": delta_t, "chips": chips, "challenges": challenges,
                     "mean_clean_bits": float(clean.mean()), "mean_extra_bits": float(np.nanmean(extra)),
                     "mean_bits_consumed": float(params.nKey + np.nanmean(extra)),
                     "invalid_keys": int(sum(n for _, _, n in per_chip))})
    return rows


def flip_histogram(spec: VariationSpec, seed: int, challenges: int = 10, evaluations: int = 500,
                   delta_t: float = 50.0, layout: ChipLayout = ChipLayout()) -> list[dict]:
    """Per-bit flip probability for a few challenges on one chip."""
    chip = chip_for(spec, layout, seed, 0)
    rows = []
    for j, c in enumerate(challenge_set(seed, challenges, layout.challenge_bits)):
        r = xbarpuf.evaluate(chip, np.tile(c, (evaluations, 1)), spec.temp_ambient + delta_t)
        flip = (r != metrics.majority_reference(r)).mean(axis=0)
        rows.extend({"challenge": j, "bit": b, "flip_probability": float(f)} for b, f in enumerate(flip))
    return rows


# tag

def tag_campaign(spec: VariationSpec, seed: int, tag_sizes=(6, 8), memories: int = 1000, chips: int = 1,
                 layout: ChipLayout = ChipLayout()) -> list[dict]:
    def run(job):
        k, bits = job
        chip = chip_for(spec, layout, seed, k)
        cfg = calibrate_reference(chip, TagConfig(tag_bits=bits), seed=seed)
        m = metrics.tag_metrics(chip, cfg, memories, trial_seed(seed, _ATTACK, k, bits))
        return {"tag_size": bits, "chip": k, "uniformity": m["balance"].mean,
                "avalanche": m["avalanche"].mean, "diffusion": m["diffusion"].mean,
                "reference_threshold": cfg.reference_threshold}

    return parallel_map(run, [(k, b) for b in tag_sizes for k in range(chips)])


# protocol level campaigns

def _systems(config: SystemConfig, seed: int, trials: int, per_system: int):
    n = -(-trials // per_system)
    return [(i, min(per_system, trials - i * per_system)) for i in range(n)]


def spoof_campaign(config: SystemConfig, seed: int, ks=(1, 16, 256), repeats: int = 1000,
                   per_system: int = 100, refresh: bool = False) -> list[dict]:
    """Empirical success of rewriting the data cells until the tag matches."""
    kmax = max(ks)
    cfg = replace(config, screen_samples=0)  # screening does not change tag statistics

    def run(job):
        i, n = job
        system = SecureBackupSystem.build(cfg, trial_seed(seed, _SYSTEMS, i))
        system.timestamp_refresh = refresh
        rng = np.random.default_rng(trial_seed(seed, _ATTACK, i))
        hits = []
        while len(hits) < n:
            rep = system.secure_backup(rng.integers(0, 2, system.nvm_layout.size(DATA)))
            if rep.key_valid:
                hits.append(attacks.spoof_attempts(system, kmax, rng))
            system.secure_restore()
        return hits

    hits = np.array([h for chunk in parallel_map(run, _systems(cfg, seed, repeats, per_system)) for h in chunk])
    return [{"trials": k, "refresh": refresh, "repeats": repeats,
             "analytic": attacks.spoofing_success_prob(config.tag.tag_bits, k),
             "empirical": float(np.mean((hits > 0) & (hits <= k)))} for k in ks]


def protocol_campaign(config: SystemConfig, seed: int, trials: int = 1000, per_system: int = 100,
                      tamper: bool = False) -> dict:
    """Backup/restore round trips, optionally flipping one data cell while powered down."""
    def run(job):
        i, n = job
        system = SecureBackupSystem.build(config, trial_seed(seed, _SYSTEMS, i))
        rng = np.random.default_rng(trial_seed(seed, _DATA, i))
        counts = dict(restored=0, silent_wrong=0, tag_mismatch=0, invalid_key=0, backup_invalid=0,
                      wrong_cipher_passed=0)
        xs = []
        for _ in range(n):
            data = rng.integers(0, 2, system.nvm_layout.size(DATA))
            rep = system.secure_backup(data)
            if not rep.key_valid:
                counts["backup_invalid"] += 1
                system.secure_restore()
                continue
            xs.append(rep.x)
            written = system.image.region(DATA)
            if tamper:
                k = rng.integers(len(written))
                write_cells(system.chip, [system.nvm_layout.cells(DATA)[k]], [1 - written[k]])
            res = system.secure_restore()
            if res.restored:
                if not np.array_equal(system.image.region(DATA), written):
                    counts["wrong_cipher_passed"] += 1
                if np.array_equal(res.data, data):
                    counts["restored"] += 1
                else:
                    counts["silent_wrong"] += 1
            elif res.reason == "TagMismatch":
                counts["tag_mismatch"] += 1
            else:
                counts["invalid_key"] += 1
        return counts, xs

    out = parallel_map(run, _systems(config, seed, trials, per_system))
    total = {k: sum(c[k] for c, _ in out) for k in out[0][0]}
    xs = [x for _, chunk in out for x in chunk]
    total.update(trials=trials, tamper=tamper, mean_x=float(np.mean(xs)) if xs else float("nan"))
    return total


def replay_campaign(config: SystemConfig, seed: int, trials: int = 1000, per_system: int = 100,
                    constant_challenge: bool = False) -> dict:
    """Two backups of the same data, then the first image is replayed."""
    def run(job):
        i, n = job
        src = RandomSource.seeded(trial_seed(seed, _ATTACK, i))
        trng = _ConstantChallenge(src) if constant_challenge else src
        system = SecureBackupSystem.build(config, trial_seed(seed, _SYSTEMS, i), trng=trng)
        system.timestamp_src = src
        rng = np.random.default_rng(trial_seed(seed, _DATA, i))
        detected = valid = 0
        while valid < n:
            data = rng.integers(0, 2, system.nvm_layout.size(DATA))
            first = system.secure_backup(data)
            old = system.image.snapshot() if first.key_valid else None
            system.secure_restore()
            second = system.secure_backup(data)
            if old is None or not second.key_valid:
                system.secure_restore()
                continue
            valid += 1
            detected += attacks.replay_attack(system, old)
        return detected

    detected = sum(parallel_map(run, _systems(config, seed, trials, per_system)))
    return {"trials": trials, "detected": int(detected), "rate": detected / trials,
            "timestamp_bits": config.timestamp_bits, "constant_challenge": constant_challenge}


class _ConstantChallenge:
    """Challenge source that repeats its first challenge forever (test stub)."""

    def __init__(self, src: RandomSource):
        self._src = src
        self._first = None

    def next_bits(self, n):
        if self._first is None or len(self._first) != n:
            self._first = self._src.next_bits(n)
        return self._first.copy()


def read_campaign(config: SystemConfig, seed: int, trials: int = 1000) -> dict:
    system = SecureBackupSystem.build(config, trial_seed(seed, _SYSTEMS, 0))
    rep = attacks.malicious_read(system, trials, trial_seed(seed, _ATTACK, 0))
    u = rep.uniformity
    return {"trials": trials, "valid_ciphertexts": u.trials, "chi2": u.chi2, "dof": u.dof,
            "p_value": u.p_value, "max_bit_deviation": float(np.abs(u.ones_frequency - 0.5).max()),
            "mutual_information": rep.mutual_information}


def model_campaign(spec: VariationSpec, seed: int, count: int = 5000, chips: int = 1,
                   learners=("logistic_regression", "perceptron"), feature_kind: str = "parity",
                   mitigation: xbarpuf.MitigationConfig = xbarpuf.MitigationConfig(xor_fold=True),
                   layout: ChipLayout = ChipLayout()) -> list[dict]:
    jobs = [(k, learner, name, m) for k in range(chips) for learner in learners
            for name, m in (("off", xbarpuf.NO_MITIGATION), ("on", mitigation))]

    def run(job):
        k, learner, name, m = job
        chip = chip_for(spec, layout, seed, k)
        train, test = attacks.model_attack(chip, m, count, trial_seed(seed, _ATTACK, k), learner, feature_kind)
        return {"chip": k, "learner": learner, "mitigation": name, "features": feature_kind,
                "crps": count, "train_accuracy": train, "test_accuracy": test}

    rows = parallel_map(run, jobs)
    # constant PUF stub as a negative control
    ds = _constant_dataset(count, seed)
    for learner in learners:
        train, test = attacks.train_model(ds, learner, feature_kind)
        rows.append({"chip": -1, "learner": learner, "mitigation": "constant_puf", "features": feature_kind,
                     "crps": count, "train_accuracy": train, "test_accuracy": test})
    return rows


def _constant_dataset(count: int, seed: int) -> attacks.CrpDataset:
    src = RandomSource.seeded(trial_seed(seed, _ATTACK, 99))
    seen, rows = set(), []
    while len(rows) < count:
        c = src.next_bits(32)
        if c.tobytes() not in seen:
            seen.add(c.tobytes())
            rows.append(c)
    n_train = int(round(2 * count / 3))
    return attacks.CrpDataset(np.array(rows), np.ones(count, dtype=np.uint8),
                              np.arange(n_train), np.arange(n_train, count))


# calibration

CALIBRATION_TARGETS = {"mean_extra_bits": 0.8, "mean_clean_bits": 30.0, "min_reliability": 0.92,
                       "mean_reliability": 0.98}


def calibrate(base: VariationSpec, seed: int, sigma_grid=(2.5, 3.0, 3.5, 4.0),
              tempco_grid=(0.003, 0.004, 0.005, 0.006), chips: int = 20, challenges: int = 50,
              rel_chips: int = 10, rel_challenges: int = 10, cycles: int = 200) -> dict:
    """Grid search for the process spread and tempco spread.

    Candidates must meet the reliability floor; among those the one closest
    to the target bit loss and clean-bit yield (relative error) wins.
    """
    rows = []
    for sp in sigma_grid:
        for ts in tempco_grid:
            spec = base.replace(sigma_process=sp, tempco_spread=ts)
            cb = clean_bits_campaign(spec, seed, chips, challenges, c2c_values=(base.sigma_c2c,))[0]
            rel = reliability_campaign(spec, seed, rel_chips, rel_challenges, cycles)["reliability"]
            score = (abs(cb["mean_extra_bits"] - CALIBRATION_TARGETS["mean_extra_bits"]) / 0.8
                     + abs(cb["mean_clean_bits"] - CALIBRATION_TARGETS["mean_clean_bits"]))
            feasible = rel.min >= CALIBRATION_TARGETS["min_reliability"] and rel.mean >= 0.96
            rows.append({"sigma_process": sp, "tempco_spread_per_k": ts,
                         "mean_extra_bits": cb["mean_extra_bits"], "mean_clean_bits": cb["mean_clean_bits"],
                         "min_reliability": rel.min, "mean_reliability": rel.mean,
                         "feasible": feasible, "score": score})
    feasible = [r for r in rows if r["feasible"]] or rows
    best = min(feasible, key=lambda r: r["score"])
    chosen = base.replace(sigma_process=best["sigma_process"], tempco_spread=best["tempco_spread_per_k"])
    return {"grid": rows, "best": best, "variation": chosen}
