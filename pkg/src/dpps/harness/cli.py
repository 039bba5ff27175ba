"""Command line entry point: ``dpps {run,sweep,calibrate,validate-config,check-invariants}``.

Exit codes: 0 success, 1 invalid configuration, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .calibrate import CalibrationError, calibrate, write_calibration
from .checks import check_invariants
from .config import ConfigError, dump_config, load_config
from .runner import SWEEP_AXES, RunAborted, SensitivityViolation, SweepError, run_experiment, run_sensitivity_sweep

log = logging.getLogger("dpps")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment TOML file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value, e.g. --set optimizer.rounds=50 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpps", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment, writing metrics.csv and summary.json")
    _add_config_args(p)
    p.add_argument("--test-mode", action="store_true", help="stop with exit code 2 if real > estimated sensitivity")

    p = sub.add_parser("sweep", help="RAS sweep over shared layers, out-degree or node count")
    _add_config_args(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma separated integers")

    p = sub.add_parser("calibrate", help="fit C' and lambda from recorded runs")
    _add_config_args(p)
    p.add_argument("--headroom", type=float, default=0.1)
    p.add_argument("--seeds", default="", help="comma separated seeds (default: master_seed)")

    p = sub.add_parser("validate-config", help="parse and validate, printing the fully materialized config")
    _add_config_args(p)

    p = sub.add_parser("check-invariants", help="run the protocol invariant checks at reduced rounds")
    _add_config_args(p)
    p.add_argument("--rounds", type=int, default=50)
    return parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise ConfigError(f"--values/--seeds: {err}") from err


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "validate-config":
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK

        if args.command == "run":
            result = run_experiment(cfg, test_mode=args.test_mode)
            print(json.dumps(asdict(result.summary), indent=2))
            log.info("wrote %s", Path(cfg.output_dir) / "metrics.csv")
            return EXIT_OK

        if args.command == "sweep":
            rows = run_sensitivity_sweep(cfg, args.axis, _int_list(args.values))
            for r in rows:
                print(f"{args.axis}={r.axis_value}\tras={r.ras:.6g}\tpeak={r.peak_sensitivity:.6g}")
            return EXIT_OK

        if args.command == "calibrate":
            cal = calibrate(cfg, headroom=args.headroom, seeds=_int_list(args.seeds) or None)
            write_calibration(cal, Path(cfg.output_dir) / "calibration.json")
            print(cal.to_json())
            return EXIT_OK

        if args.command == "check-invariants":
            results = check_invariants(cfg, rounds=args.rounds)
            for r in results:
                print(r.line())
            return EXIT_OK if all(r.ok for r in results) else EXIT_INVARIANT
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SensitivityViolation as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except (RunAborted, SweepError, CalibrationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVARIANT if isinstance(err.__cause__, SensitivityViolation) else EXIT_CONFIG
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
