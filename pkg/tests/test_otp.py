import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvshield import metrics, xbarpuf
from nvshield.bits import bits_to_int, int_to_bits
from nvshield.config import calibrated_variation
from nvshield.device import ChipLayout, sample_chip, trial_seed
from nvshield.otp import bit_uniformity, ciphertext_uniformity_test, decrypt, encrypt, key_space_size
from nvshield.protocol import SecureBackupSystem, SystemConfig
from nvshield.reliability import Key, extract_key

bits16 = st.lists(st.integers(0, 1), min_size=16, max_size=16).map(np.array)


def test_xor_example():
    key = Key(int_to_bits(0x1234, 16), True)
    assert bits_to_int(encrypt(int_to_bits(0xABCD, 16), key)) == 0xB9F9


def test_zero_key_is_identity():
    d = np.random.default_rng(0).integers(0, 2, 16)
    assert np.array_equal(encrypt(d, Key(np.zeros(16), True)), d)


def test_round_trip_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        d, k = rng.integers(0, 2, 16), Key(rng.integers(0, 2, 16), True)
        assert np.array_equal(decrypt(encrypt(d, k), k), d)


@given(bits16, bits16)
def test_encrypt_is_an_involution(d, k):
    key = Key(k, True)
    assert np.array_equal(encrypt(d, key), decrypt(d, key))
    assert np.array_equal(encrypt(encrypt(d, key), key), d)


def test_rejects_invalid_or_short_keys():
    with pytest.raises(ValueError):
        encrypt(np.zeros(16), Key(np.zeros(16), False))
    with pytest.raises(ValueError):
        encrypt(np.zeros(16), Key(np.zeros(15), True))


def test_key_space():
    assert key_space_size(16) == 65536
    assert key_space_size(16, after_bruteforce=True) == 65536
    assert key_space_size(1) == 2 == key_space_size(1, True)
    with pytest.raises(ValueError):
        key_space_size(0)


def _within(freq, expected, n, k):
    sigma = np.sqrt(expected * (1 - expected) / n)
    return np.all(np.abs(freq - expected) <= k * sigma)


def test_ideal_keys_zero_plaintext_uniform():
    keys = np.random.default_rng(2).integers(0, 2, (1000, 16))
    res = ciphertext_uniformity_test(lambda d, i: encrypt(d, Key(keys[i], True)), np.zeros(16, dtype=np.uint8), 1000)
    assert res.sufficient and res.trials == 1000
    assert _within(res.ones_frequency, 0.5, 1000, 4)
    assert not res.rejects(0.001)


def test_single_trial_is_flagged_insufficient():
    res = bit_uniformity(np.ones((1, 16)))
    assert not res.sufficient and res.trials == 1


def test_chi_square_statistic_by_hand():
    c = np.array([[1, 0], [1, 1], [1, 0], [0, 0]])
    # bit 0: 3 ones of 4 -> (6-4)^2/4 = 1; bit 1: 1 one -> 1
    res = bit_uniformity(c, min_trials=1)
    assert res.chi2 == pytest.approx(2.0) and res.dof == 2


def _puf_key_ciphertexts(trials=1000, seed=0):
    system = SecureBackupSystem.build(SystemConfig(spec=calibrated_variation()), trial_seed(seed, 2, 0))
    plain = np.random.default_rng(seed).integers(0, 2, 16).astype(np.uint8)
    cts = []
    while len(cts) < trials:
        rep = system.secure_backup(plain)
        if rep.key_valid:
            cts.append(system.image.region("data"))
        system.secure_restore()
    return system, plain, np.array(cts)


@pytest.fixture(scope="module")
def puf_ciphertexts():
    return _puf_key_ciphertexts()


def test_puf_key_bits_within_binomial_bounds_of_measured_uniformity(puf_ciphertexts):
    system, plain, cts = puf_ciphertexts
    ch = np.random.default_rng(99).integers(0, 2, (2000, 32))
    resp = xbarpuf.respond(system.chip, ch, system.config.mitigation, rng=np.random.default_rng(1), write_back=False)
    u = metrics.uniformity(resp).mean
    expected = np.where(plain == 1, 1 - u, u)
    assert _within(cts.mean(axis=0), expected, len(cts), 5)


def test_puf_key_chi_square_does_not_reject_on_one_device(puf_ciphertexts):
    # Known red: each device has a fixed ones bias (chip uniformity != 0.5),
    # so 10^3 ciphertexts from one device are enough to reject p = 0.5.
    _, _, cts = puf_ciphertexts
    assert not bit_uniformity(cts).rejects(0.001)


def test_puf_keys_across_chip_population_are_uniform():
    spec = calibrated_variation()
    rng = np.random.default_rng(5)
    plain = rng.integers(0, 2, 16)
    cts = []
    k = 0
    while len(cts) < 1000:
        chip = sample_chip(spec, ChipLayout(), trial_seed(5, k))
        k += 1
        c = rng.integers(0, 2, 32)
        r = xbarpuf.respond(chip, np.stack([c, c]), xbarpuf.MitigationConfig())
        key, _ = extract_key(r)
        if key.valid:
            cts.append(encrypt(plain, key))
    assert not bit_uniformity(np.array(cts)).rejects(0.001)
