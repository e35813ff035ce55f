"""Command line entry point.

    throttlesim calibrate [--config C] [--out-dir D]
    throttlesim run EXPERIMENT [--config C] [--seed N] [--out-dir D] [--format F] [--set k=v]
    throttlesim report [EXPERIMENT ...] [--config C] [--seed N] [--out-dir D] [--format F]

Exit codes: 0 success, 2 configuration error, 3 calibration failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from ..covert import ThresholdCalibrationError
from ..pmu import ConfigError
from .calibrate import CalibrationError, calibrate_model
from .config import load_config
from .experiments import EXPERIMENTS, UnknownExperiment, run_experiment
from .report import FORMATS, emit_report, summary_dict, write_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3


def _override(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="mobile",
                        help="config file path or preset name (mobile, desktop)")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--out-dir", default="results", help="directory for output files")
    common.add_argument("--format", dest="formats", action="append", choices=FORMATS,
                        help="output format; repeat for several (default: all)")

    p = argparse.ArgumentParser(prog="throttlesim",
                                description="Current-management throttling simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="fit the model to the TP targets")
    run = sub.add_parser("run", parents=[common], help="run one experiment")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                     metavar="KEY=VALUE", help="override an experiment parameter (JSON value)")
    rep = sub.add_parser("report", parents=[common], help="run experiments and write reports")
    rep.add_argument("experiments", nargs="*", metavar="EXPERIMENT",
                     help=f"subset of {', '.join(EXPERIMENTS)}")
    return p


def _calibrate(args, cfg) -> int:
    params = calibrate_model(cfg)
    rows = params.table_rows()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(rows, out / "calibration.csv")
    print(json.dumps({"config_hash": cfg.hash(),
                      "cdyn": {c.label: round(v, 4) for c, v in params.cdyn.items()},
                      "slew_mv_per_us": {k.value: round(v, 4) for k, v in params.slew.items()},
                      "max_rel_error": round(params.max_rel_error(), 6),
                      "oracle_ok": params.oracle_ok()}, indent=2, sort_keys=True))
    return EXIT_OK


def _run(args, cfg, experiments: List[str], overrides: dict) -> int:
    for name in experiments:
        if name not in EXPERIMENTS:
            raise UnknownExperiment(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    for name in experiments:
        rep = run_experiment(cfg, name, args.seed, **overrides)
        emit_report(rep, args.out_dir, args.formats or FORMATS)
        print(json.dumps(summary_dict(rep), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "calibrate":
            return _calibrate(args, cfg)
        if args.command == "run":
            return _run(args, cfg, [args.experiment], dict(args.overrides))
        return _run(args, cfg, args.experiments or list(EXPERIMENTS), {})
    except (ConfigError, FileNotFoundError, UnknownExperiment) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CalibrationError, ThresholdCalibrationError) as exc:
        print(f"calibration failure: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION


if __name__ == "__main__":
    sys.exit(main())
