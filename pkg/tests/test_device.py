import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvshield.device import (HRS, LRS, ChipLayout, CycleContext, MemristorDevice, VariationSpec,
                             effective_resistance, resistance, sample_chip, trial_seed, write_state)


def test_spec_rejects_inverted_window():
    with pytest.raises(ValueError):
        VariationSpec(hrs_nominal=1e3, lrs_nominal=1e4)
    with pytest.raises(ValueError):
        VariationSpec(sigma_c2c=1.0)
    with pytest.raises(ValueError):
        VariationSpec(temp_ambient=0)


def test_spec_json_round_trip():
    s = VariationSpec(sigma_process=0.7, sigma_c2c=0.05)
    doc = json.loads(json.dumps(s.to_json()))
    assert set(doc) >= {"hrs_ohm", "lrs_ohm", "sigma_process", "sigma_c2c", "temp_coeff_per_k", "temp_k"}
    assert VariationSpec.from_json(doc) == s
    with pytest.raises(ValueError):
        VariationSpec.from_json({"bogus": 1})


def test_layout_needs_pairs():
    with pytest.raises(ValueError):
        ChipLayout(puf_rows=63)
    assert ChipLayout().challenge_bits == 32
    assert ChipLayout().response_bits == 32


def test_zero_process_variation_gives_identical_devices():
    s = VariationSpec(sigma_process=0.0, sigma_process_nvm=0.0, tempco_spread=0.0)
    chip = sample_chip(s, ChipLayout(), 123)
    for arr in (chip.puf, chip.nvm):
        assert np.all(arr.process_hrs == 1.0) and np.all(arr.process_lrs == 1.0)
        assert np.all(arr.tempco == s.temp_coeff)


def test_same_seed_same_chip():
    a = sample_chip(VariationSpec(), ChipLayout(), 5)
    b = sample_chip(VariationSpec(), ChipLayout(), 5)
    for name in ("process_hrs", "process_lrs", "tempco"):
        assert np.array_equal(getattr(a.puf, name), getattr(b.puf, name))
        assert np.array_equal(getattr(a.nvm, name), getattr(b.nvm, name))
    assert np.array_equal(a.tag_loads, b.tag_loads)
    assert a.rng.random() == b.rng.random()
    c = sample_chip(VariationSpec(), ChipLayout(), 6)
    assert not np.array_equal(a.puf.process_hrs, c.puf.process_hrs)


def test_process_spread_statistics():
    # 4 blocks x 64 x 16 = 4096 devices, two factors each
    chip = sample_chip(VariationSpec(sigma_process=0.1), ChipLayout(), 1)
    logs = np.log(np.concatenate([chip.puf.process_hrs.ravel(), chip.puf.process_lrs.ravel()]))
    assert logs.size >= 8192
    assert abs(logs.std() / 0.1 - 1) < 0.05


def test_resistance_formula_cases(spec):
    assert resistance(LRS, 1.0, 1.0, 1.0, spec.temp_coeff, spec, spec.temp_ambient) == spec.lrs_nominal
    r = resistance(HRS, 1.1, 1.0, 0.95, spec.temp_coeff, spec, spec.temp_ambient)
    assert r == pytest.approx(1.045 * spec.hrs_nominal, rel=1e-12)
    hot = resistance(LRS, 1.0, 1.0, 1.0, 1e-3, spec, spec.temp_ambient + 50)
    assert hot == pytest.approx(1.05 * spec.lrs_nominal, rel=1e-12)


def test_zero_c2c_writes_are_repeatable():
    s = VariationSpec(sigma_c2c=0.0)
    dev = MemristorDevice(1.2, 0.8)
    ctx = CycleContext(s.temp_ambient, np.random.default_rng(0))
    n1 = write_state(dev, LRS, s, ctx)
    r1 = effective_resistance(dev, s, ctx, n1)
    n2 = write_state(dev, LRS, s, ctx)
    assert effective_resistance(dev, s, ctx, n2) == r1


def test_c2c_spread_statistics():
    s = VariationSpec(sigma_c2c=0.1)
    dev = MemristorDevice(1.0, 1.0)
    ctx = CycleContext(s.temp_ambient, np.random.default_rng(3))
    noise = np.array([write_state(dev, LRS, s, ctx) for _ in range(10_000)])
    assert abs(np.log(noise).std() / 0.1 - 1) < 0.05


def test_reads_are_pure(chip, spec):
    chip.nvm.write((0, 0), HRS, spec, chip.rng)
    ctx = chip.context()
    dev = chip.nvm.device((0, 0))
    noise = chip.nvm.noise[0, 0]
    assert effective_resistance(dev, spec, ctx, noise) == effective_resistance(dev, spec, ctx, noise)
    r1 = chip.nvm.resistance(spec, spec.temp_ambient)
    r2 = chip.nvm.resistance(spec, spec.temp_ambient)
    assert np.array_equal(r1, r2)


def test_write_rejects_bad_target(spec, chip):
    with pytest.raises(ValueError):
        write_state(MemristorDevice(1.0, 1.0), 2, spec, chip.context())
    with pytest.raises(ValueError):
        chip.nvm.write((0, 0), 3, spec, chip.rng)


def test_every_write_draws_fresh_noise(chip, spec):
    chip.nvm.write((1, 1), LRS, spec, chip.rng)
    first = chip.nvm.noise[1, 1]
    chip.nvm.write((1, 1), LRS, spec, chip.rng)
    assert chip.nvm.noise[1, 1] != first


@given(st.floats(0.01, 0.3), st.floats(0.01, 0.3), st.integers(0, 2 ** 32))
def test_c2c_spread_monotone_with_common_random_numbers(s1, s2, seed):
    lo, hi = sorted((s1, s2))
    z = np.random.default_rng(seed).standard_normal(200)
    spread = [np.std(VariationSpec().lrs_nominal * np.exp(s * z)) for s in (lo, hi)]
    assert spread[1] >= spread[0]


@given(st.integers(0, 2 ** 63), st.integers(0, 1000))
def test_trial_seed_deterministic_and_64_bit(master, k):
    a = trial_seed(master, k)
    assert a == trial_seed(master, k)
    assert 0 <= a < 2 ** 64
    assert a != trial_seed(master, k + 1)
