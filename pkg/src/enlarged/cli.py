"""Command-line entry point: ``enlarged fit-density | fit-reg | bench | gen``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .density import FitOptions, detect_outliers, fit_enlarged
from .errors import ConfigError, DataError, EnlargedError
from .regression import detect_outliers_reg, fit_enlarged_reg
from .scores import GammaScoreConfig, SampleSet

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ALL_FAILED = 0, 1, 2, 3


def _fit_options(args) -> FitOptions:
    try:
        return FitOptions(max_iter=args.max_iter, tol=args.tol, n_starts=args.n_starts, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _gamma(value: float) -> float:
    if not value > 0:
        raise ConfigError(f"gamma must be positive, got {value}")
    return value


def _fit_json(fit, theta: dict, outliers) -> str:
    return json.dumps({
        "c_hat": fit.c_hat,
        "contamination": 1.0 - fit.c_hat,
        "c_raw": fit.c_raw,
        "branch": fit.branch,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "final_score": fit.final_score,
        "theta": theta,
        "outliers": [int(i) for i in outliers],
    }, indent=2)


def cmd_fit_density(args) -> int:
    cfg = GammaScoreConfig(_gamma(args.gamma), args.phi)
    _, X, _ = harness.read_numeric_csv(args.csv)
    samples = SampleSet(X)
    fit = fit_enlarged(samples, cfg, _fit_options(args))
    theta = {"mean": fit.theta_hat.mean.tolist(), "cov": fit.theta_hat.cov.tolist()}
    print(_fit_json(fit, theta, detect_outliers(samples, fit)))
    return EXIT_OK


def cmd_fit_reg(args) -> int:
    data, _ = harness.load_csv(args.csv, args.target)
    fit = fit_enlarged_reg(data, _gamma(args.gamma), _fit_options(args))
    p = fit.theta_hat
    theta = {"beta": p.beta.tolist(), "intercept": p.intercept, "sigma": p.sigma}
    print(_fit_json(fit, theta, detect_outliers_reg(data, fit)))
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = harness.load_config(args.spec)
    progress = None
    if args.verbose:
        progress = lambda r: print(f"replication {r + 1}/{spec.replications}", file=sys.stderr)
    table = harness.run_experiment(spec, progress=progress)
    out_csv = table.to_csv()
    if args.out:
        Path(args.out).write_text(out_csv)
    else:
        sys.stdout.write(out_csv)
    if args.json:
        Path(args.json).write_text(table.to_json())
    if all(r["failures"] == r["replications"] for r in table.rows):
        print("every method failed in every replication", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


def cmd_gen(args) -> int:
    seed, n, ratio = args.seed, args.n, args.ratio
    if not 0.0 <= ratio < 0.5:
        raise ConfigError("ratio must lie in [0, 0.5)")
    g = args.generator
    if g == "density_synth":
        X, _ = harness.gen_density_synth(seed, n, ratio, d=args.d)
        harness.write_csv(args.out, X.points)
    elif g == "reg_toy":
        data, _ = harness.gen_reg_toy(seed, n, ratio)
        harness.write_csv(args.out, data.x, data.y)
    elif g in ("reg_synth_y", "reg_synth_xy"):
        mode = "y_only" if g == "reg_synth_y" else "xy"
        data, _, _, _ = harness.gen_reg_synth(seed, n, args.d, ratio, mode)
        harness.write_csv(args.out, data.x, data.y)
    else:
        raise ConfigError(f"unknown generator {g!r}")
    return EXIT_OK


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-starts", type=int, default=FitOptions.n_starts)
    p.add_argument("--max-iter", type=int, default=FitOptions.max_iter)
    p.add_argument("--tol", type=float, default=FitOptions.tol)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enlarged", description="Robust fitting with enlarged models c * p_theta.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-density", help="fit c * N(mu, Sigma) to an all-numeric CSV")
    p.add_argument("csv")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--phi", choices=("power", "sphere"), default="power")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit_density)

    p = sub.add_parser("fit-reg", help="fit c * N(y | x'beta + b, sigma^2); last column is y")
    p.add_argument("csv")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--target", default=None, help="name of the dependent-variable column")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit_reg)

    p = sub.add_parser("bench", help="run an experiment described by a key = value config file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None, help="write the result CSV here instead of stdout")
    p.add_argument("--json", default=None, help="also write the JSON summary with metadata")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write one synthetic data set as CSV")
    p.add_argument("--generator", required=True, choices=harness.GENERATORS[:4])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "d", 0) is None:
        args.d = 2 if args.generator == "density_synth" else 5
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EnlargedError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
