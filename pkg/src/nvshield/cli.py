"""
Command line runner: ``nvshield <subcommand> --config cfg.json --seed N --out DIR``.

Each subcommand writes CSV (curves, tables) or JSON (traces, reports) plus a
manifest.json with file hashes and schema versions. Exit status 2 means a bad
configuration, 3 an invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, campaigns
from .config import ConfigError, ExperimentConfig
from .protocol import SecureBackupSystem, load_trace, run_power_trace

log = logging.getLogger("nvshield")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3

# bump when the columns of a file change
SCHEMAS = {
    "voting_curves.csv": 1, "puf_metrics.csv": 1, "bit_aliasing.csv": 1, "reliability.csv": 1,
    "tag_metrics.csv": 1, "clean_bits.csv": 1, "flip_histogram.csv": 1, "spoof_curve.csv": 1,
    "model_attack.csv": 1, "replay.json": 1, "malicious_read.json": 1, "protocol_log.json": 1,
    "cycle_report.json": 1, "calibration_grid.csv": 1, "calibrated.json": 1,
}


class InvariantError(AssertionError):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def csv_bytes(rows: list[dict]) -> bytes:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue().encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode()


def _check(cond, message):
    if not cond:
        raise InvariantError(message)


def _report_rows(reports) -> list[dict]:
    return [r.summary() for r in reports]


# subcommands: each returns {filename: bytes}

def cmd_voting_curves(cfg: ExperimentConfig, args) -> dict:
    step = cfg.count("p_step", 0.01)
    ps = np.round(np.arange(0, 1 + step / 2, step), 6)
    rows = campaigns.voting_curves(cfg.seed, tuple(cfg.count("N", [1, 2, 4, 8, 16])), ps,
                                   int(cfg.count("trials", 100_000)))
    _check(all(0 <= r["analytic"] <= 1 and 0 <= r["empirical"] <= 1 for r in rows), "probability outside [0, 1]")
    return {"voting_curves.csv": csv_bytes(rows)}


def cmd_puf_metrics(cfg: ExperimentConfig, args) -> dict:
    pm = campaigns.puf_metrics(cfg.variation, cfg.seed, int(cfg.count("chips", 500)),
                               int(cfg.count("challenges", 25)), cfg.layout, cfg.mitigation)
    alias = [{"challenge": j, "bit": b, "ones_fraction": float(v)}
             for j, row in enumerate(pm["bit_aliasing"]) for b, v in enumerate(row)]
    rel = campaigns.reliability_campaign(cfg.variation, cfg.seed, int(cfg.count("rel_chips", 25)),
                                         int(cfg.count("rel_challenges", 25)), int(cfg.count("cycles", 500)),
                                         float(cfg.count("delta_t", 50.0)), cfg.layout)
    reports = list(pm["summary"].values()) + [rel["reliability"], rel["steadiness"]]
    return {"puf_metrics.csv": csv_bytes(_report_rows(reports)), "bit_aliasing.csv": csv_bytes(alias),
            "reliability.csv": csv_bytes(rel["rows"])}


def cmd_tag_metrics(cfg: ExperimentConfig, args) -> dict:
    rows = campaigns.tag_campaign(cfg.variation, cfg.seed, tuple(cfg.count("tag_sizes", [6, 8])),
                                  int(cfg.count("memories", 1000)), int(cfg.count("chips", 1)), cfg.layout)
    return {"tag_metrics.csv": csv_bytes(rows)}


def cmd_clean_bits(cfg: ExperimentConfig, args) -> dict:
    rows = campaigns.clean_bits_campaign(cfg.variation, cfg.seed, int(cfg.count("chips", 50)),
                                         int(cfg.count("challenges", 100)),
                                         tuple(cfg.count("sigma_c2c", [0.02, 0.05, 0.10])),
                                         float(cfg.count("delta_t", 50.0)), cfg.key, cfg.mitigation, cfg.layout)
    hist = campaigns.flip_histogram(cfg.variation, cfg.seed, int(cfg.count("hist_challenges", 10)),
                                    int(cfg.count("hist_evaluations", 500)), float(cfg.count("delta_t", 50.0)),
                                    cfg.layout)
    return {"clean_bits.csv": csv_bytes(rows), "flip_histogram.csv": csv_bytes(hist)}


def _spoof_rows(cfg, ks):
    system = cfg.system_config()
    repeats = int(cfg.count("repeats", 1000))
    rows = []
    for refresh in (False, True):
        rows += campaigns.spoof_campaign(system, cfg.seed, ks, repeats, refresh=refresh)
    return rows


def cmd_spoof_curve(cfg: ExperimentConfig, args) -> dict:
    ks = tuple(cfg.count("ks", [1, 2, 4, 8, 16, 32, 64, 128, 256]))
    return {"spoof_curve.csv": csv_bytes(_spoof_rows(cfg, ks))}


def cmd_model_attack(cfg: ExperimentConfig, args) -> dict:
    rows = campaigns.model_campaign(cfg.variation, cfg.seed, int(cfg.count("crps", 5000)),
                                    int(cfg.count("chips", 1)), layout=cfg.layout)
    return {"model_attack.csv": csv_bytes(rows)}


def cmd_attack(cfg: ExperimentConfig, args) -> dict:
    system = cfg.system_config()
    trials = int(cfg.count("trials", 1000))
    if args.mode == "spoof":
        return {"spoof_curve.csv": csv_bytes(_spoof_rows(cfg, tuple(cfg.count("ks", [1, 16, 256]))))}
    if args.mode == "replay":
        return {"replay.json": json_bytes(campaigns.replay_campaign(system, cfg.seed, trials))}
    if args.mode == "read":
        return {"malicious_read.json": json_bytes(campaigns.read_campaign(system, cfg.seed, trials))}
    return cmd_model_attack(cfg, args)


def cmd_simulate_protocol(cfg: ExperimentConfig, args) -> dict:
    if not args.trace:
        raise ConfigError("simulate-protocol needs --trace")
    try:
        events = load_trace(args.trace)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trace: {exc}") from exc
    system = SecureBackupSystem.build(cfg.system_config(), cfg.seed)
    try:
        records = run_power_trace(system, events)
    except ValueError as exc:
        raise ConfigError(f"malformed trace: {exc}") from exc
    cycles = [{"event": r["event"], "kind": r["kind"], "result": r.get("result"),
               "cycles": r.get("cycles"), "total_cycles": r.get("total_cycles")}
              for r in records if "total_cycles" in r]
    return {"protocol_log.json": json_bytes(records), "cycle_report.json": json_bytes(cycles)}


def cmd_calibrate(cfg: ExperimentConfig, args) -> dict:
    res = campaigns.calibrate(cfg.variation, cfg.seed,
                              tuple(cfg.count("sigma_grid", [2.5, 3.0, 3.5, 4.0])),
                              tuple(cfg.count("tempco_grid", [0.003, 0.004, 0.005, 0.006])))
    doc = {"schema_version": SCHEMAS["calibrated.json"], "variation": res["variation"].to_json()}
    return {"calibration_grid.csv": csv_bytes(res["grid"]), "calibrated.json": json_bytes(doc)}


COMMANDS = {
    "voting-curves": cmd_voting_curves, "puf-metrics": cmd_puf_metrics, "tag-metrics": cmd_tag_metrics,
    "clean-bits": cmd_clean_bits, "spoof-curve": cmd_spoof_curve, "model-attack": cmd_model_attack,
    "attack": cmd_attack, "simulate-protocol": cmd_simulate_protocol, "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvshield", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment JSON config")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "attack":
            p.add_argument("--mode", choices=("spoof", "replay", "read", "model"), required=True)
        if name == "simulate-protocol":
            p.add_argument("--trace", help="JSON list of power events")
    return parser


def write_outputs(out_dir: Path, command: str, cfg: ExperimentConfig, files: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (out_dir / name).write_bytes(data)
    config = {k: v for k, v in cfg.to_json().items() if k != "output"}  # outputs must not depend on where they go
    manifest = {"command": command, "version": __version__, "seed": cfg.seed, "config": config,
                "files": {name: {"sha256": hashlib.sha256(data).hexdigest(), "schema_version": SCHEMAS[name]}
                          for name, data in sorted(files.items())}}
    (out_dir / "manifest.json").write_bytes(json_bytes(manifest))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output = args.out
        cfg.experiment = cfg.experiment or args.command
        files = COMMANDS[args.command](cfg, args)
        write_outputs(Path(cfg.output), args.command, cfg, files)
    except ConfigError as exc:
        print(f"nvshield: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"nvshield: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
