"""Command-line entry point: ``poetcov <command> ...``.

Exit codes: 0 success, 2 bad usage or input, 3 numerical failure, 4 internal error.
Errors are printed to stderr as a JSON object.
"""
import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import (DegenerateObjectiveError, NonStationaryError, PanelParseError,
                     SingularMatrixError)
from .io import read_json, write_json, write_matrix_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4
OUTPUT_ENV = "POETCOV_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _k_arg(s):
    if s == "auto":
        return s
    try:
        k = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError("K must be an integer or 'auto'") from None
    if k < 0:
        raise argparse.ArgumentTypeError("K must be >= 0")
    return k


def _grid_arg(s):
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be comma-separated numbers") from None


def _common(sp, panel=True):
    if panel:
        sp.add_argument("panel", help="panel CSV")
        sp.add_argument("--orientation", choices=["columns", "rows"], default="columns",
                        help="assets as columns (default) or as rows")
    sp.add_argument("--out", default=None,
                    help=f"output directory (default: ${OUTPUT_ENV} or ./poetcov_out)")
    sp.add_argument("--config", default=None,
                    help="JSON file whose keys override the command-line flags")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                    help="worker threads (results do not depend on it)")


def _threshold_flags(sp):
    sp.add_argument("--K", type=_k_arg, default="auto", help="number of factors or 'auto'")
    sp.add_argument("--M", type=int, default=8, help="largest K tried when K is 'auto'")
    sp.add_argument("--ic", choices=["IC1", "IC2"], default="IC1")
    sp.add_argument("--rule", choices=["hard", "soft", "scad", "adaptive_lasso"], default="soft")
    sp.add_argument("--style", choices=["adaptive_theta", "correlation", "constant"],
                    default="adaptive_theta")


def build_parser():
    p = _Parser(prog="poetcov", description="POET covariance estimation toolkit")
    p.add_argument("--version", action="version", version=f"poetcov {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("estimate", help="estimate covariance and precision from a panel")
    _common(sp)
    _threshold_flags(sp)
    sp.add_argument("--C", type=float, default=0.5, help="threshold constant")
    sp.add_argument("--cv", action="store_true", help="choose C by cross-validation")
    sp.add_argument("--require-precision", action="store_true",
                    help="fail (exit 3) when the precision matrix cannot be formed")

    sp = sub.add_parser("select-k", help="choose the number of factors")
    _common(sp)
    sp.add_argument("--M", type=int, default=8)
    sp.add_argument("--ic", choices=["IC1", "IC2"], default="IC1")

    sp = sub.add_parser("cv", help="cross-validate the threshold constant")
    _common(sp)
    _threshold_flags(sp)
    sp.add_argument("--H", type=int, default=10)
    sp.add_argument("--n-grid", type=int, default=50)
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--grid", type=_grid_arg, default=None, help="explicit comma-separated C grid")
    sp.add_argument("--split", choices=["block", "iid"], default="block")

    sp = sub.add_parser("simulate", help="Monte Carlo replications of a design")
    _common(sp, panel=False)
    sp.add_argument("--design", choices=["calibrated", "design2", "model1", "model2", "model3"],
                    default="calibrated")
    sp.add_argument("--p", type=int, default=100)
    sp.add_argument("--T", type=int, default=300)
    sp.add_argument("--reps", type=int, default=10)
    sp.add_argument("--estimators", default=None,
                    help="JSON file with a list of estimator configurations")
    sp.add_argument("--params", default=None, help="calibration JSON (calibrated design)")
    sp.add_argument("--save-panel", default=None, help="also write replication 0's panel here")

    sp = sub.add_parser("backtest", help="rolling minimum-variance backtest")
    _common(sp)
    sp.add_argument("--window", type=int, default=252)
    sp.add_argument("--rebalance", type=int, default=21)
    sp.add_argument("--estimators", default=None,
                    help="JSON file with a list of estimator configurations (first is the base)")

    sp = sub.add_parser("calibrate", help="fit simulation parameters to a panel")
    _common(sp)
    sp.add_argument("--K", type=int, default=3)
    return p


# ---------------------------------------------------------------------------

def _apply_config(args, parser):
    if not args.config:
        return args
    try:
        cfg = read_json(args.config)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    for key, val in cfg.items():
        name = key.replace("-", "_")
        if not hasattr(args, name) or name in ("command", "config"):
            raise UsageError(f"unknown config key {key!r} for command {args.command}")
        setattr(args, name, val)
    return args


def _out_dir(args):
    out = args.out or os.environ.get(OUTPUT_ENV) or "poetcov_out"
    os.makedirs(out, exist_ok=True)
    return out


def _load_panel(args):
    from .panel import load_csv

    if not os.path.exists(args.panel):
        raise FileNotFoundError(f"panel file not found: {args.panel}")
    return load_csv(args.panel, args.orientation)


def _estimators(path, default):
    from .estimators import EstimatorConfig

    if path is None:
        return [EstimatorConfig(**d) for d in default]
    if isinstance(path, list):
        data = path
    else:
        if not os.path.exists(path):
            raise FileNotFoundError(f"estimator file not found: {path}")
        data = read_json(path)
    if not isinstance(data, list) or not data:
        raise ValueError("estimators must be a non-empty JSON list")
    return [EstimatorConfig(**d) for d in data]


def _config_dict(args):
    return {k: v for k, v in sorted(vars(args).items())
            if not k.startswith("_") and k != "threads"}


def _write_meta(out, args, result, started, t0):
    meta = {
        "command": args.command,
        "config": _config_dict(args),
        "version": __version__,
        "backend": BACKEND,
        "seed": args.seed,
        "result": result,
        "timestamp": {
            "started_utc": started,
            "wall_time_s": time.perf_counter() - t0,
        },
    }
    write_json(os.path.join(out, "meta.json"), meta)


def cmd_estimate(args):
    from .core import poet, precision_woodbury, save_estimate
    from .panel import demean
    from .selection import CvConfig, poet_cv
    from .thresholding import ThresholdSpec

    panel = demean(_load_panel(args))
    out = _out_dir(args)
    result = {}
    if args.cv:
        est, curve = poet_cv(panel, args.K, args.rule, CvConfig(style=args.style, seed=args.seed),
                             args.M, args.ic)
        curve.to_csv(os.path.join(out, "cv_curve.csv"))
        result["C_star"] = est.C_used
    else:
        est = poet(panel, args.K, ThresholdSpec(args.C, args.style), args.rule, args.M, args.ic)
    try:
        est = precision_woodbury(est)
        result["precision"] = "ok"
    except SingularMatrixError as exc:
        if args.require_precision:
            raise
        result["precision"] = f"unavailable: {exc}"
    save_estimate(est, out, panel.asset_ids)
    meta_est = read_json(os.path.join(out, "meta.json"))
    result.update(estimate=meta_est)
    _write_meta(out, args, result, args._started, args._t0)
    print(json.dumps({"out": out, "K": est.K_used, "C": est.C_used}))
    return EXIT_OK


def cmd_select_k(args):
    from .factors import select_num_factors
    from .panel import demean

    panel = demean(_load_panel(args))
    out = _out_dir(args)
    k, curve = select_num_factors(panel, args.M, args.ic)
    curve.to_csv(os.path.join(out, "ic_curve.csv"))
    result = {"K_hat": k, "exact_low_rank": curve.exact_low_rank, "variant": curve.variant}
    _write_meta(out, args, result, args._started, args._t0)
    print(json.dumps(result))
    return EXIT_OK


def cmd_cv(args):
    from .factors import estimate_factors, select_num_factors
    from .panel import demean
    from .selection import CvConfig, cross_validate_c, min_eigenvalue_curve, write_curve_csv

    Y = demean(_load_panel(args)).Y
    out = _out_dir(args)
    K = args.K
    if K == "auto":
        K, _ = select_num_factors(Y, min(args.M, min(Y.shape) - 1), args.ic)
    fit = estimate_factors(Y, K)
    cfg = CvConfig(H=args.H, n_grid=args.n_grid, epsilon=args.epsilon, grid=args.grid,
                   split=args.split, style=args.style, seed=args.seed)
    C_star, curve = cross_validate_c(fit.U_hat, args.rule, cfg)
    curve.to_csv(os.path.join(out, "cv_curve.csv"))
    lam = min_eigenvalue_curve(fit.U_hat, args.rule, np.linspace(0.0, curve.M_cap, 101), args.style)
    write_curve_csv(os.path.join(out, "min_eigenvalue_curve.csv"), ["C", "lambda_min"], lam)
    result = {"K": K, "C_star": C_star, "C_min": curve.C_min, "M_cap": curve.M_cap}
    _write_meta(out, args, result, args._started, args._t0)
    print(json.dumps(result))
    return EXIT_OK


_DEFAULT_SIM = [
    {"name": "poet", "kind": "poet", "K": "auto", "C": 0.5, "rule": "soft"},
    {"name": "known_factor", "kind": "known_factor", "K": 3, "C": 0.5, "rule": "soft"},
    {"name": "sample", "kind": "sample", "K": 0},
]


def cmd_simulate(args):
    from .experiments import make_generator, run_simulation
    from .panel import CalibrationParams, save_csv

    if args.p < 1 or args.T < 2 or args.reps < 1:
        raise UsageError("need p >= 1, T >= 2 and reps >= 1")
    out = _out_dir(args)
    params = CalibrationParams.load(args.params) if args.params else None
    default = _DEFAULT_SIM if args.design == "calibrated" else [
        d for d in _DEFAULT_SIM if d["kind"] != "known_factor"]
    ests = _estimators(args.estimators, default)
    res = run_simulation(args.design, args.p, args.T, args.reps, args.seed, ests, params,
                         threads=max(1, int(args.threads)))
    res.to_csv(os.path.join(out, "per_rep.csv"), os.path.join(out, "aggregate.csv"))
    if args.save_panel:
        panel, _ = make_generator(args.design, args.p, args.T, args.seed, params)(0)
        save_csv(panel, args.save_panel)
    result = {"aggregate": res.aggregate(), "estimators": [e.to_dict() for e in ests]}
    _write_meta(out, args, result, args._started, args._t0)
    print(json.dumps({"out": out, "rows": len(res.rows)}))
    return EXIT_OK


_DEFAULT_BT = [
    {"name": "poet", "kind": "poet_cv", "K": "auto", "rule": "soft"},
    {"name": "sfm", "kind": "sfm", "K": "auto"},
]


def cmd_backtest(args):
    from .portfolio import backtest

    panel = _load_panel(args)
    if args.window < 2 or args.rebalance < 1:
        raise UsageError("window must be >= 2 and rebalance >= 1")
    if panel.T < args.window + args.rebalance:
        raise UsageError(f"panel has T={panel.T} periods, fewer than window + rebalance = "
                         f"{args.window + args.rebalance}")
    out = _out_dir(args)
    ests = _estimators(args.estimators, _DEFAULT_BT)
    rep = backtest(panel, ests, args.window, args.rebalance, seed=args.seed)
    rep.to_csv(os.path.join(out, "backtest.csv"))
    rep.to_json(os.path.join(out, "summary.json"))
    result = rep.summary()
    _write_meta(out, args, result, args._started, args._t0)
    print(json.dumps({"out": out, "comparisons": result["comparisons"]}, default=str))
    return EXIT_OK


def cmd_calibrate(args):
    from .experiments import fit_calibration

    panel = _load_panel(args)
    out = _out_dir(args)
    params = fit_calibration(panel, args.K)
    params.save(os.path.join(out, "calibration.json"))
    _write_meta(out, args, params.to_dict(), args._started, args._t0)
    print(json.dumps({"out": out}))
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "select-k": cmd_select_k,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "backtest": cmd_backtest,
    "calibrate": cmd_calibrate,
}


def _fail(code, exc):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "col", "lambda_min", "C"):
        if getattr(exc, attr, None) is not None:
            err[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(err, default=str) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(args, parser)
        args._started = datetime.now(timezone.utc).isoformat()
        args._t0 = time.perf_counter()
        code = COMMANDS[args.command](args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (SingularMatrixError, NonStationaryError, DegenerateObjectiveError,
            np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (UsageError, FileNotFoundError, PanelParseError, ValueError, TypeError) as exc:
        return _fail(EXIT_USAGE, exc)
    except Exception as exc:  # pragma: no cover - last resort
        return _fail(EXIT_INTERNAL, exc)
    return code


if __name__ == "__main__":
    sys.exit(main())
