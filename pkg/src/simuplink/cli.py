"""Command-line entry point.

Exit codes: 0 success, 1 gradient check above tolerance, 2 configuration
error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import harness
from .channel_io import ChannelDimensionError, ChannelFormatError, import_channels
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML/JSON experiment configuration")
    common.add_argument("--out", default="results", help="output directory (file for export-channels)")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--workers", type=int, help="override the worker count")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="per-trial output format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="simuplink", description="SIM uplink sum-rate campaigns")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="full campaign")
    sub.add_parser("sweep-layers", parents=[common], help="rate vs. layer count")
    sub.add_parser("sweep-power", parents=[common], help="rate vs. transmit power")
    sub.add_parser("grad-check", parents=[common], help="analytic vs. finite-difference gradient")
    sub.add_parser("export-channels", parents=[common], help="write generated SIM channels to --out")
    imp = sub.add_parser("import-channels", parents=[common], help="validate a channel file against the config")
    imp.add_argument("path", nargs="?", help="channel file (default: channel_source.path)")
    sub.add_parser("validate-config", parents=[common], help="parse and validate the configuration")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    return dataclasses.replace(config, **overrides).validate() if overrides else config


def _dispatch(args) -> int:
    config = _load(args)
    cmd = args.command
    if cmd == "validate-config":
        print(f"{args.config}: ok")
        return EXIT_OK
    if cmd == "grad-check":
        report = harness.gradient_check(config)
        for L, N, K, err in report.per_instance:
            print(f"L={L} N={N} K={K} max_rel_error={err:.3e}")
        status = "PASS" if report.passed else "FAIL"
        print(f"{status}: max relative error {report.max_rel_error:.3e} (tolerance {report.tolerance:g})")
        return EXIT_OK if report.passed else EXIT_CHECK_FAILED
    if cmd == "export-channels":
        count = harness.export_config_channels(config, args.out)
        print(f"wrote {count} ensembles to {args.out}")
        return EXIT_OK
    if cmd == "import-channels":
        path = args.path or config.channel_source.path
        if not path:
            raise ConfigError("channel_source.path", "no channel file given")
        scenario = harness.Scenario(config)
        ensembles = import_channels(path, expected_N=scenario.N, expected_K=config.users)
        print(f"{path}: {len(ensembles)} ensembles, N={scenario.N}, K={config.users}")
        return EXIT_OK

    runner = {"run": harness.run_experiment, "sweep-layers": harness.sweep_layers,
              "sweep-power": harness.sweep_power}[cmd]
    results = runner(config)
    plot = {"sweep-layers": "sweep_layers", "sweep-power": "sweep_power"}.get(cmd)
    for path in harness.write_outputs(results, config, args.out, args.format, plot_name=plot):
        print(path)
    for a in results.aggregates:
        print(f"{a.method:20s} L={a.L} P_T={a.P_T_dbm:g} dBm/m^2  R={a.mean_sum_rate:.6g} +/- {a.ci95:.2g} bits/s/Hz")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ChannelDimensionError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ChannelFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
