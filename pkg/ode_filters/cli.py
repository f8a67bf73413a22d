"""
Command-line front end

    ode-filters solve --problem logistic --variant ekf --q 2 --h 0.01
    ode-filters benchmark --problem linear --q 2 --out linear.csv
    ode-filters pf --problem bernoulli --particles 1000 --out pf.csv
    ode-filters stability --q 1 2 --h 0.1

Exit codes: 0 success, 2 usage or validation error, 1 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings

from .exceptions import ConfigurationError, OdeFilterError
from .harness import COMMANDS, ExperimentConfig, ExperimentHarness, kde_path, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--problem", help="linear, logistic, fitzhugh or bernoulli")
    parser.add_argument("--variant", dest="variants", nargs="+", metavar="VARIANT",
                        help="ek0/sch, ekf, ukf, ker, kf, or pf1/pf2 for the pf command")
    parser.add_argument("--q", nargs="+", type=int, help="number of modelled derivatives")
    parser.add_argument("--h", nargs="+", type=float, help="step sizes")
    parser.add_argument("--t-end", dest="t_end", type=float, help="end of the integration interval")
    parser.add_argument("--r", type=float, help="measurement variance R = r I of Gaussian filters")
    parser.add_argument("--kappa", nargs="+", type=float, help="particle measurement variance scale")
    parser.add_argument("--particles", type=int, help="number of particles")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out", help="output CSV path (default: standard output)")
    parser.add_argument("--config", dest="config_path", help="JSON file of configuration values")
    parser.add_argument("--reps", type=int, help="particle repetitions averaged per row")
    parser.add_argument("--workers", type=int, help="worker threads for sweeps")
    parser.add_argument("--init-mode", dest="init_mode", help="exact-2, exact-3 or affine")
    parser.add_argument("--no-calibrate", dest="calibrate", action="store_const", const=False,
                        help="report uncalibrated (unit sigma^2) uncertainties")
    parser.add_argument("--lambda1", nargs="+", type=float, help="real parts of the stability grid")
    parser.add_argument("--lambda2", nargs="+", type=float, help="imaginary parts of the stability grid")
    parser.add_argument("--kde-h", dest="kde_h", type=float, help="step size of the density estimate run")
    parser.add_argument("--kde-times", dest="kde_times", nargs="+", type=float, help="density estimate times")
    parser.add_argument("--threshold", type=float, help="resampling threshold as a fraction of J")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ode-filters",
        description="Probabilistic ODE solvers as Gaussian and particle filters",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "run one solver and write its per-step solution estimate",
        "benchmark": "sweep variants, orders and step sizes and write accuracy metrics",
        "pf": "run particle filter solvers and write mean estimates and density grids",
        "stability": "certify closed-loop stability of the exact Kalman filter on a test equation grid",
    }
    for command in COMMANDS:
        _add_common_flags(subparsers.add_parser(command, help=helps[command]))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code == 0 else EXIT_USAGE

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)

    flags = {key: value for key, value in vars(args).items() if key not in ("command", "verbose", "config_path")}
    try:
        config = ExperimentConfig.from_sources(args.command, args.config_path, **flags)
        harness = ExperimentHarness(config)
        harness.validate(args.command)
    except (ConfigurationError, TypeError) as err:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE

    try:
        return _run(harness, args.command)
    except OdeFilterError as err:
        print(f"{parser.prog} {args.command}: solver failure: {err}", file=sys.stderr)
        return EXIT_FAILURE


def _emit(df, path) -> None:
    text = write_csv(df, path)
    if path is None:
        sys.stdout.write(text)
    else:
        logger.info(f"wrote {len(df)} rows to {path}")


def _run(harness: ExperimentHarness, command: str) -> int:
    out = harness.config.out
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        match command:
            case "solve":
                _emit(harness.solve(), out)
            case "benchmark":
                _emit(harness.benchmark(), out)
            case "pf":
                if out is None:
                    logger.warning("density grids are only written next to --out, skipping them")
                means, kde = harness.pf(with_kde=out is not None)
                _emit(means, out)
                if kde is not None:
                    _emit(kde, kde_path(out))
            case "stability":
                _emit(harness.stability(), out)
    return EXIT_OK
