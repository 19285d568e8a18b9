import csv
import hashlib
import json
import subprocess
import sys

import pytest

from nvshield import campaigns, cli
from nvshield.config import ConfigError, ExperimentConfig, calibrated_variation

SMALL = {
    "trials": {"p_step": 0.25, "N": [1, 3], "trials": 2000, "chips": 4, "challenges": 5, "rel_chips": 2,
               "rel_challenges": 2, "cycles": 20, "memories": 50, "tag_sizes": [6, 8], "hist_challenges": 2,
               "hist_evaluations": 20, "ks": [1, 4], "repeats": 6, "crps": 300, "sigma_c2c": [0.05, 0.1]},
    "system": {"screen_samples": 10, "tag_calibration_trials": 200},
}

HEADERS = {
    "voting_curves.csv": ["p", "N", "scheme", "analytic", "empirical"],
    "puf_metrics.csv": ["metric", "n", "mean", "min", "max"],
    "bit_aliasing.csv": ["challenge", "bit", "ones_fraction"],
    "reliability.csv": ["chip", "challenge", "reliability", "steadiness"],
    "tag_metrics.csv": ["tag_size", "chip", "uniformity", "avalanche", "diffusion", "reference_threshold"],
    "clean_bits.csv": ["sigma_c2c", "delta_t", "chips", "challenges", "mean_clean_bits", "mean_extra_bits",
                       "mean_bits_consumed", "invalid_keys"],
    "flip_histogram.csv": ["challenge", "bit", "flip_probability"],
    "spoof_curve.csv": ["trials", "refresh", "repeats", "analytic", "empirical"],
    "model_attack.csv": ["chip", "learner", "mitigation", "features", "crps", "train_accuracy", "test_accuracy"],
}

TRACE = [{"kind": "SetData", "data": "1100110011001100"}, {"kind": "LowPowerWarning"}, {"kind": "PowerFail"},
         {"kind": "PowerRestored", "available_power": 0.2}, {"kind": "PowerRestored", "available_power": 3.0}]


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.mark.parametrize("command", ["voting-curves", "puf-metrics", "tag-metrics", "clean-bits", "spoof-curve",
                                     "model-attack"])
def test_subcommand_outputs_and_schema(command, cfg_file, tmp_path):
    out = tmp_path / command
    assert run([command, "--config", cfg_file, "--seed", 5, "--out", out]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == command and manifest["seed"] == 5
    for name, meta in manifest["files"].items():
        data = (out / name).read_bytes()
        assert hashlib.sha256(data).hexdigest() == meta["sha256"]
        assert meta["schema_version"] == cli.SCHEMAS[name]
        if name in HEADERS:
            assert next(csv.reader(data.decode().splitlines())) == HEADERS[name]


def test_voting_curve_grid(cfg_file, tmp_path):
    run(["voting-curves", "--config", cfg_file, "--out", tmp_path])
    rows = list(csv.DictReader((tmp_path / "voting_curves.csv").read_text().splitlines()))
    assert {float(r["p"]) for r in rows} == {0.0, 0.25, 0.5, 0.75, 1.0}
    assert {(r["N"], r["scheme"]) for r in rows} == {("1", "all_agree"), ("3", "all_agree"), ("1", "majority"),
                                                      ("3", "majority")}


def test_default_voting_grid():
    rows = campaigns.voting_curves(0, trials=10)
    assert len({r["p"] for r in rows}) == 101
    assert {r["N"] for r in rows} == {1, 2, 4, 8, 16}


@pytest.mark.parametrize("mode,name", [("replay", "replay.json"), ("read", "malicious_read.json"),
                                       ("spoof", "spoof_curve.csv"), ("model", "model_attack.csv")])
def test_attack_modes(mode, name, tmp_path):
    cfg = dict(SMALL, trials={**SMALL["trials"], "trials": 20})
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    assert run(["attack", "--mode", mode, "--config", p, "--out", tmp_path / mode]) == 0
    assert (tmp_path / mode / name).exists()


def test_simulate_protocol(cfg_file, tmp_path):
    trace = tmp_path / "trace.json"
    trace.write_text(json.dumps(TRACE))
    assert run(["simulate-protocol", "--config", cfg_file, "--trace", trace, "--out", tmp_path / "p"]) == 0
    log = json.loads((tmp_path / "p" / "protocol_log.json").read_text())
    assert [r["result"] for r in log] == ["data set", "backup", "off", "waiting", "Restored"]
    assert log[-1]["data"] == "1100110011001100"
    report = json.loads((tmp_path / "p" / "cycle_report.json").read_text())
    assert [r["total_cycles"] for r in report] == [27.0 + log[1]["x"], 27.0]


def test_same_seed_gives_identical_bytes(cfg_file, tmp_path):
    for d in ("a", "b"):
        assert run(["voting-curves", "--config", cfg_file, "--seed", 9, "--out", tmp_path / d]) == 0
    for name in ("voting_curves.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"seed": -1}, {"trials": {"chips": 0}}, {"variation": {"x": 1}},
                                 {"variation": {"hrs_ohm": 1.0}}, {"system": {"warp": 1}}, {"layout": {"puf_rows": 3}},
                                 {"mitigation": {"column_shuffle": [0, 0]}}, []])
def test_bad_config_exit_code(doc, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert run(["voting-curves", "--config", p, "--out", tmp_path / "o"]) == 2


def test_config_file_errors(tmp_path):
    assert run(["voting-curves", "--config", tmp_path / "missing.json"]) == 2
    (tmp_path / "x.json").write_text("{not json")
    assert run(["voting-curves", "--config", tmp_path / "x.json"]) == 2
    assert run(["voting-curves", "--seed", 2 ** 64, "--out", tmp_path / "o"]) == 2


def test_trace_errors(cfg_file, tmp_path):
    assert run(["simulate-protocol", "--config", cfg_file, "--out", tmp_path / "o"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"kind": "Explode"}]))
    assert run(["simulate-protocol", "--config", cfg_file, "--trace", bad, "--out", tmp_path / "o"]) == 2
    nodata = tmp_path / "nodata.json"
    nodata.write_text(json.dumps([{"kind": "LowPowerWarning"}]))
    assert run(["simulate-protocol", "--config", cfg_file, "--trace", nodata, "--out", tmp_path / "o"]) == 2


def test_invariant_violation_exit_code(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setattr(campaigns, "voting_curves", lambda *a, **k: [{"analytic": 1.5, "empirical": 0.0}])
    assert run(["voting-curves", "--config", cfg_file, "--out", tmp_path / "o"]) == 3


def test_config_defaults_and_round_trip():
    cfg = ExperimentConfig()
    assert cfg.variation == calibrated_variation()
    again = ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again.to_json() == cfg.to_json()
    with pytest.raises(ConfigError):
        ExperimentConfig(seed=True)


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "nvshield.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
