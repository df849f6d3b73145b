"""Command-line interface.

Every command accepts ``--config FILE``: a JSON object whose top-level keys
are ``seed``, ``threads`` and one section per command, e.g.::

    {"seed": 7, "tune": {"iterations": 50, "layers": 1}}

Section keys are the long flag names with dashes replaced by underscores.
Flags given on the command line win over file values.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(divergence, failed forecast), 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import artifacts
from .backtest import BacktestError, ModelSettings, SamplePlan, load_csv, run_backtest
from .bayesopt import BoConfig, LossSettings, tune_layerwise
from .errors import (
    DataValidationError,
    DivergenceError,
    ForecastFailedError,
    InvalidArgumentError,
    NotPositiveDefiniteError,
    NumericOverflowError,
    RankDeficiencyError,
)
from .network import NetworkConfig, forecast, regnet_forward
from .ou import ols_fit, read_trajectory_csv, simulate_named, write_trajectory_csv

log = logging.getLogger("regpred")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
GLOBAL_KEYS = ("seed", "threads")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults even for flags without help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "%(default)" in text or action.default is None or action.default is argparse.SUPPRESS \
                or isinstance(action.default, bool):
            return text
        if action.option_strings or action.nargs in (argparse.OPTIONAL, argparse.ZERO_OR_MORE):
            text += " (default: %(default)s)"
        return text


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = _Parser(prog="regpred", description="GOU regression/prediction forecaster", formatter_class=fmt)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--threads", type=_positive_int, default=1, help="worker threads")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    # --seed / --threads are also accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default: 0)")
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                        help="worker threads (default: 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a Wiener / Brownian / OU path", formatter_class=fmt, parents=[common])
    p.add_argument("--kind", choices=["wiener", "brownian", "ou"], default="ou", help="process family")
    p.add_argument("--alpha", type=float, default=0.1, help="mean-reversion rate (ou)")
    p.add_argument("--n", type=float, default=0.0, help="mean-reversion level (ou)")
    p.add_argument("--mu", type=float, default=0.0, help="drift (brownian)")
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    p.add_argument("--y0", type=float, default=0.0, help="initial value")
    p.add_argument("--steps", type=_positive_int, default=500, help="number of increments")
    p.add_argument("--out", help="output CSV; stdout if omitted")

    p = sub.add_parser("calibrate", help="offline least-squares fit of A, N, Sigma", formatter_class=fmt, parents=[common])
    p.add_argument("--input", required=True, help="trajectory CSV (t,y1..yd) or date,value CSV")
    p.add_argument("--out", help="output JSON; stdout if omitted")

    p = sub.add_parser("regress", help="run the regression layers over a series", formatter_class=fmt, parents=[common])
    p.add_argument("--input", required=True, help="date,value or t,y1 CSV")
    p.add_argument("--hyper", required=True, help="hyperparameter JSON from `tune`")
    p.add_argument("--out-dir", required=True, help="output directory")

    p = sub.add_parser("forecast", help="Monte-Carlo forecast with 95%% band", formatter_class=fmt, parents=[common])
    p.add_argument("--input", required=True, help="date,value or t,y1 CSV")
    p.add_argument("--hyper", required=True, help="hyperparameter JSON from `tune`")
    p.add_argument("--horizon", type=_positive_int, default=100, help="forecast steps N")
    p.add_argument("--trajectories", type=_positive_int, default=50, help="Monte-Carlo paths n_W")
    p.add_argument("--out", help="output CSV; stdout if omitted")

    p = sub.add_parser("tune", help="layerwise Bayesian optimization of hyperparameters", formatter_class=fmt, parents=[common])
    p.add_argument("--input", required=True, help="date,value or t,y1 CSV")
    p.add_argument("--layers", type=int, choices=[1, 2], default=2, help="network depth K")
    _add_bo_flags(p)
    p.add_argument("--horizon", type=_positive_int, default=100, help="loss horizon")
    p.add_argument("--trajectories", type=_positive_int, default=50, help="Monte-Carlo paths n_W")
    p.add_argument("--stride", type=_positive_int, default=64, help="loss endpoint stride")
    p.add_argument("--valid", type=_positive_int, default=None,
                   help="score only prediction windows inside the last VALID points")
    p.add_argument("--out", required=True, help="hyperparameter JSON to write")
    p.add_argument("--trace-dir", help="directory for per-layer BO trace CSVs")

    p = sub.add_parser("backtest", help="rolling-window backtest vs random walk", formatter_class=fmt, parents=[common])
    p.add_argument("--input", required=True, help="date,value or t,y1 CSV")
    p.add_argument("--n-train", type=_positive_int, default=1830, help="training window length")
    p.add_argument("--n-valid", type=_positive_int, default=200, help="validation window length")
    p.add_argument("--n-test", type=_positive_int, default=100, help="test window length")
    p.add_argument("--sample-stride", type=_positive_int, default=30, help="offset between samples")
    p.add_argument("--layers", type=int, choices=[1, 2], default=2, help="network depth K")
    _add_bo_flags(p)
    p.add_argument("--horizon", type=_positive_int, default=100, help="validation loss horizon")
    p.add_argument("--trajectories", type=_positive_int, default=50, help="Monte-Carlo paths n_W")
    p.add_argument("--stride", type=_positive_int, default=64, help="loss endpoint stride")
    p.add_argument("--hyper", help="fixed hyperparameters (skip tuning)")
    p.add_argument("--out-dir", required=True, help="output directory")
    return parser


def _add_bo_flags(p):
    p.add_argument("--iterations", type=_positive_int, default=200, help="BO iterations D")
    p.add_argument("--restarts", type=_positive_int, default=5, help="L-BFGS-B restarts N_s")
    p.add_argument("--xi", type=_nonneg_float, default=0.01, help="EI exploration parameter")
    p.add_argument("--init-samples", type=_positive_int, default=5, help="initial Latin-hypercube points")
    p.add_argument("--parameterization", choices=["tied", "full"], default="tied",
                   help="layer-2 z0 search parameterization")


def _subparsers(parser) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _coerce(action, value, where):
    if action.type is not None and not isinstance(value, (list, dict)):
        try:
            value = action.type(str(value)) if not isinstance(value, bool) else value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config {where}: {exc}") from None
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config {where}: {value!r} not in {list(action.choices)}")
    return value


def _apply_config(parser, argv, path):
    """Re-parse ``argv`` with defaults taken from the JSON config at ``path``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: top level must be an object")
    choices = _subparsers(parser)
    top = {a.dest: a for a in parser._actions}
    top_defaults = {}
    for key, value in doc.items():
        if key in GLOBAL_KEYS:
            top_defaults[key] = _coerce(top[key], value, key)
        elif key in choices:
            if not isinstance(value, dict):
                raise UsageError(f"config {key}: section must be an object")
            sp = choices[key]
            dests = {a.dest: a for a in sp._actions if a.dest != "help"}
            section = {}
            for k, v in value.items():
                if k not in dests:
                    raise UsageError(f"unknown config key {key}.{k}")
                section[k] = _coerce(dests[k], v, f"{key}.{k}")
                dests[k].required = False
            sp.set_defaults(**section)
        else:
            raise UsageError(f"unknown config key {key}")
    parser.set_defaults(**top_defaults)
    return parser.parse_args(argv)


def _config_flag(argv):
    """Value of ``--config`` if given before the subcommand, else None."""
    for i, arg in enumerate(argv):
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if not arg.startswith("-"):
            break
    return None


def read_series(path) -> np.ndarray:
    """Univariate values from a ``date,value`` or ``t,y1`` CSV."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if header and header[0].strip().lower() == "date":
        return load_csv(path).values
    traj = read_trajectory_csv(path)
    if traj.shape[1] != 1:
        raise DataValidationError(f"{path}: expected a univariate series, got {traj.shape[1]} columns")
    return traj[:, 0]


def cmd_simulate(args):
    if args.sigma < 0:
        raise UsageError(f"--sigma must be >= 0, got {args.sigma}")
    traj = simulate_named(args.kind, args.y0, args.steps, seed=args.seed,
                          mu=args.mu, sigma=args.sigma, alpha=args.alpha, level=args.n)
    if args.out:
        write_trajectory_csv(args.out, traj)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["t", "y1"])
        for t, v in enumerate(traj[:, 0]):
            w.writerow([t, repr(float(v))])


def cmd_calibrate(args):
    with open(args.input, newline="") as fh:
        header = next(csv.reader(fh), [])
    traj = read_series(args.input)[:, None] if header[:1] == ["date"] else read_trajectory_csv(args.input)
    fit = ols_fit(traj)
    doc = {
        "a": fit.params.a_matrix.tolist(),
        "n": fit.params.n_vector.tolist(),
        "sigma": fit.params.sigma_matrix.tolist(),
        "residual_cov": fit.residual_cov.tolist(),
        "clipped": fit.clipped,
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_regress(args):
    y = read_series(args.input)
    layers = artifacts.load_layers(args.hyper)
    out = regnet_forward(y, NetworkConfig(tuple(layers), horizon=1, n_trajectories=1))
    os.makedirs(args.out_dir, exist_ok=True)
    for k, zs in enumerate(out.zs, start=1):
        with open(os.path.join(args.out_dir, f"layer{k}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"z{i + 1}" for i in range(zs.shape[1])])
            for t, row in enumerate(zs):
                w.writerow([t] + [repr(float(v)) for v in row])


def cmd_forecast(args):
    y = read_series(args.input)
    layers = artifacts.load_layers(args.hyper)
    config = NetworkConfig(tuple(layers), args.horizon, args.trajectories)
    res = forecast(y, config, args.seed, threads=args.threads)
    start = y.shape[0]
    if args.out:
        res.to_csv(args.out, start=start)
    else:
        lo, hi = res.band95
        w = csv.writer(sys.stdout)
        w.writerow(["t", "mean", "variance", "lo95", "hi95"])
        for i in range(res.mean.shape[0]):
            w.writerow([start + i] + [repr(float(v[i])) for v in (res.mean, res.variance, lo, hi)])
    if res.n_diverged:
        log.warning("%d trajectories diverged and were dropped", res.n_diverged)


def _bo_config(args):
    return BoConfig(iterations=args.iterations, restarts=args.restarts, xi=args.xi,
                    init_samples=args.init_samples, seed=args.seed)


def cmd_tune(args):
    y = read_series(args.input)
    T = y.shape[0] - 1 - args.horizon
    first = 2
    if args.valid is not None:
        first = max(2, y.shape[0] - args.valid - 1)
    if T < first:
        raise UsageError(f"series of {y.shape[0]} points is too short for --horizon {args.horizon}")
    settings = LossSettings(stride=args.stride, first=first, seed=args.seed, threads=args.threads)
    res = tune_layerwise(y, args.layers, _bo_config(args), args.horizon, args.trajectories,
                         parameterization=args.parameterization, loss_settings=settings)
    artifacts.save_layers(args.out, res.layers)
    if args.trace_dir:
        os.makedirs(args.trace_dir, exist_ok=True)
        for k, trace in enumerate(res.traces, start=1):
            trace.to_csv(os.path.join(args.trace_dir, f"trace_layer{k}.csv"))
    for k, trace in enumerate(res.traces, start=1):
        log.info("layer %d: best objective %.6g after %d evaluations", k, trace.best_f, trace.n_evaluations)


def cmd_backtest(args):
    y = read_series(args.input)
    plan = SamplePlan(args.n_train, args.n_valid, args.n_test, args.sample_stride)
    settings = ModelSettings(n_layers=args.layers, horizon=args.horizon, n_trajectories=args.trajectories,
                             parameterization=args.parameterization, loss_stride=args.stride)
    layers = artifacts.load_layers(args.hyper) if args.hyper else None
    res = run_backtest(y, plan, settings, _bo_config(args), args.seed, layers=layers, threads=args.threads)
    res.write(args.out_dir)
    if res.n_failed:
        log.warning("%d of %d samples failed", res.n_failed, len(res.samples))


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "regress": cmd_regress,
    "forecast": cmd_forecast,
    "tune": cmd_tune,
    "backtest": cmd_backtest,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    config_path = _config_flag(argv)
    try:
        if config_path:
            args = _apply_config(parser, argv, config_path)
        else:
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"regpred: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"regpred: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, DataValidationError, InvalidArgumentError) as exc:
        print(f"regpred {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, ForecastFailedError, NumericOverflowError, NotPositiveDefiniteError,
            RankDeficiencyError, BacktestError) as exc:
        print(f"regpred {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"regpred {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
