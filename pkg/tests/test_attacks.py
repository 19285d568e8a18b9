import numpy as np
import pytest

from nvshield import attacks, campaigns, xbarpuf
from nvshield.config import calibrated_variation
from nvshield.device import ChipLayout, VariationSpec, sample_chip
from nvshield.protocol import SecureBackupSystem, State, SystemConfig

QUIET = SystemConfig(spec=VariationSpec(sigma_c2c=0.0), screen_samples=0)


def test_spoofing_closed_form():
    assert attacks.spoofing_success_prob(8, 0) == 0
    assert attacks.spoofing_success_prob(8, 1) == 2 ** -8
    # 1 - (255/256)^256 evaluated exactly
    assert attacks.spoofing_success_prob(8, 256) == pytest.approx(0.632840, abs=1e-6)
    with pytest.raises(ValueError):
        attacks.spoofing_success_prob(8, -1)


def test_outcome_bounds():
    assert attacks.AttackOutcome("spoof", 4, 1).probability == 0.25
    with pytest.raises(ValueError):
        attacks.AttackOutcome("spoof", 1, 2)


def test_zero_spoof_trials():
    system = SecureBackupSystem.build(QUIET, 0)
    system.secure_backup(np.zeros(16))
    assert attacks.run_spoofing(system, 0, 1).successes == 0


def test_spoofing_needs_powered_down_system():
    with pytest.raises(ValueError):
        attacks.spoof_attempts(SecureBackupSystem.build(QUIET, 0), 1, np.random.default_rng(0))


def test_spoof_curve_matches_closed_form():
    rows = campaigns.spoof_campaign(QUIET, 1, ks=(1, 16), repeats=400)
    for row in rows:
        p = attacks.spoofing_success_prob(8, row["trials"])
        assert abs(row["empirical"] - p) <= 3 * np.sqrt(p * (1 - p) / 400)


def test_replay_of_current_image_is_a_legitimate_restore():
    system = SecureBackupSystem.build(QUIET, 2)
    system.secure_backup(np.ones(16))
    assert not attacks.replay_attack(system, system.image.snapshot())
    assert system.state == State.RESTORED


def test_replay_detected_with_timestamps():
    out = campaigns.replay_campaign(QUIET, 3, trials=300)
    p = 1 - 2 ** -8
    assert out["rate"] >= p - 3 * np.sqrt(p * (1 - p) / 300)


def test_replay_succeeds_without_timestamps_and_fixed_challenge():
    cfg = SystemConfig(spec=VariationSpec(sigma_c2c=0.0), screen_samples=0, timestamp_bits=0)
    out = campaigns.replay_campaign(cfg, 3, trials=50, constant_challenge=True)
    assert out["detected"] == 0


@pytest.mark.parametrize("secure_access", [True, False])
def test_replay_with_and_without_secure_store_access(secure_access):
    system = SecureBackupSystem.build(QUIET, 6)
    rng = np.random.default_rng(0)
    n, detected = 100, 0
    for _ in range(n):
        d = rng.integers(0, 2, 16)
        system.secure_backup(d)
        old = system.image.snapshot()
        system.secure_restore()
        system.secure_backup(rng.integers(0, 2, 16))
        detected += attacks.replay_attack(system, old, secure_access=secure_access)
    assert detected >= n - 3


def test_mutual_information_estimator():
    rng = np.random.default_rng(0)
    plain = rng.integers(0, 2, (1000, 16))
    keys = rng.integers(0, 2, (1000, 16))
    assert attacks.mean_bitwise_mi(plain, plain ^ keys) < 0.01
    assert attacks.mean_bitwise_mi(plain, plain) == pytest.approx(1.0, abs=0.01)
    assert attacks.mutual_information([0, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(1.0)


def test_malicious_read_report():
    system = SecureBackupSystem.build(QUIET, 5)
    rep = attacks.malicious_read(system, 50, 0)
    assert rep.trials == 50 and rep.uniformity.trials == 50
    assert 0 <= rep.mutual_information <= 1


def test_crp_dataset_rejects_duplicates():
    c = np.zeros((2, 32), dtype=np.uint8)
    with pytest.raises(ValueError):
        attacks.CrpDataset(c, np.zeros(2), np.array([0]), np.array([1]))


def test_harvest_split_and_uniqueness(chip):
    ds = attacks.harvest_crps(chip, 300, 0)
    assert len(ds.train) == 200 and len(ds.test) == 100
    assert not set(ds.train) & set(ds.test)
    assert len({c.tobytes() for c in ds.challenges}) == 300


def test_feature_transforms():
    c = np.array([[0, 1, 1]])
    assert attacks.features(c, "raw").tolist() == [[1, -1, -1, 1]]
    assert attacks.features(c, "parity").tolist() == [[1, 1, -1, 1]]
    with pytest.raises(ValueError):
        attacks.features(c, "fourier")


def test_learners_fit_a_linear_function():
    rng = np.random.default_rng(0)
    x = np.hstack([rng.standard_normal((600, 5)), np.ones((600, 1))])
    y = (x @ np.array([1.0, -2.0, 0.5, 0.0, 1.5, 0.2]) > 0).astype(float)
    for fit in (attacks.logistic_regression, attacks.perceptron):
        w = fit(x, y)
        assert np.mean((x @ w > 0) == y) > 0.95


def test_constant_puf_is_learned_perfectly(caplog):
    ds = campaigns._constant_dataset(600, 0)
    assert attacks.train_model(ds)[1] == 1.0
    assert "all training responses are equal" in caplog.text


def test_mitigation_lowers_model_accuracy():
    chip = sample_chip(calibrated_variation(), ChipLayout(), 0)
    off = attacks.model_attack(chip, xbarpuf.NO_MITIGATION, 2000, 1)[1]
    on = attacks.model_attack(chip, xbarpuf.MitigationConfig(xor_fold=True), 2000, 1)[1]
    assert off > on
