"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 solver failure, 3 property-suite
failure.  Failures print one line ``error: <kind>: <reason>`` on stderr.
"""

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import MonteCarloError, SurrogateError
from .experiment import (
    START_KINDS,
    ExperimentConfig,
    generate_instance,
    run_monte_carlo,
    starting_point,
)
from .kernels import MpeConstraintSpec
from .solvers import TRACE_COLUMNS, ProblemInstance, SolverOptions, marks_solve
from .verify import run_suite

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_PROPERTY = 0, 1, 2, 3
FORMATS = ("csv", "json-lines")
RUN_COLUMNS = ("run", "mse_constrained", "mse_least_squares", "iterations",
               "termination", "constraint_value", "error")

_SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverOptions)}
_CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"solver"}
_OUTPUT_KEYS = {"out", "runs_out", "format"}


class ValidationError(Exception):
    pass


def fmt(value):
    """12 significant digits; booleans and missing values spelled out."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def _json_value(value):
    if isinstance(value, (float, np.floating)):
        v = float(format(float(value), ".12g"))
        return v if np.isfinite(v) else str(v)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def write_records(path, rows, columns, fmt_name):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if fmt_name == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([fmt(row[c]) for c in columns])
        else:
            for row in rows:
                fh.write(json.dumps({c: _json_value(row[c]) for c in columns}) + "\n")


def load_config_file(path):
    """Parse a JSON run configuration.  Returns ``(config_kwargs, solver_kwargs, output)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ValidationError("config root must be an object")
    config, solver, output = {}, {}, {}
    for key, value in doc.items():
        if key == "solver":
            if not isinstance(value, dict):
                raise ValidationError("key 'solver' must be an object")
            for skey, svalue in value.items():
                if skey not in _SOLVER_KEYS:
                    raise ValidationError(f"unknown config key 'solver.{skey}'")
                solver[skey] = svalue
        elif key == "output":
            if not isinstance(value, dict):
                raise ValidationError("key 'output' must be an object")
            for okey, ovalue in value.items():
                if okey not in _OUTPUT_KEYS:
                    raise ValidationError(f"unknown config key 'output.{okey}'")
                output[okey] = ovalue
        elif key in _CONFIG_KEYS:
            config[key] = value
        else:
            raise ValidationError(f"unknown config key '{key}'")
    return config, solver, output


def build_config(args):
    config, solver, output = {}, {}, {}
    if args.config:
        config, solver, output = load_config_file(args.config)
    overrides = {
        "seed": args.seed, "n_monte_carlo": getattr(args, "mc", None), "q": args.q,
        "tau": args.tau, "gamma": args.gamma, "n_measurements": args.n,
        "noise_variance": args.noise_var, "start": args.start,
        "workers": getattr(args, "workers", None),
    }
    config.update({k: v for k, v in overrides.items() if v is not None})
    if args.tol is not None:
        solver["objective_tolerance"] = args.tol
    if args.max_iter is not None:
        solver["max_iterations"] = args.max_iter
    try:
        config["solver"] = SolverOptions(**solver)
        cfg = ExperimentConfig(**config)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc))
    out = args.out or output.get("out")
    fmt_name = args.format or output.get("format", "csv")
    if fmt_name not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}, got {fmt_name!r}")
    runs_out = getattr(args, "runs_out", None) or output.get("runs_out")
    return cfg, out, runs_out, fmt_name


def _load_instance(path, cfg):
    try:
        data = np.load(path)
        A, y = data["A"], data["y"]
        sizes = tuple(int(b) for b in data["group_sizes"]) if "group_sizes" in data else cfg.group_sizes
    except (OSError, KeyError, ValueError) as exc:
        raise ValidationError(f"cannot read instance file {path}: {exc}")
    try:
        return ProblemInstance(A, y, MpeConstraintSpec(cfg.q, cfg.tau, cfg.gamma, sizes))
    except ValueError as exc:
        raise ValidationError(str(exc))


def cmd_solve(args):
    cfg, out, _, fmt_name = build_config(args)
    instance = _load_instance(args.instance, cfg) if args.instance else generate_instance(cfg, 0)
    theta0 = starting_point(instance, cfg.start, cfg.start_margin)
    _, trace = marks_solve(instance, theta0, cfg.solver)
    rows = trace.rows(timing=not args.no_timing)
    if out:
        write_records(out, rows, TRACE_COLUMNS, fmt_name)
    else:
        print(",".join(TRACE_COLUMNS))
        for row in rows:
            print(",".join(fmt(row[c]) for c in TRACE_COLUMNS))
    print(f"termination={trace.termination_reason} iterations={trace.n_iterations} "
          f"objective={fmt(trace.records[-1].objective if trace.records else trace.initial_objective)}",
          file=sys.stderr)
    return EXIT_OK


def summary_document(summary, cfg):
    config = dataclasses.asdict(cfg)
    return {
        "mse_constrained": _json_value(summary.mse_constrained),
        "mse_least_squares": _json_value(summary.mse_least_squares),
        "win_rate": _json_value(summary.win_rate),
        "mean_iterations": _json_value(summary.mean_iterations),
        "n_runs": summary.n_runs,
        "n_failed": summary.n_failed,
        "config": {k: ([_json_value(x) for x in v] if isinstance(v, (list, tuple)) else
                       {sk: _json_value(sv) for sk, sv in v.items()} if isinstance(v, dict) else
                       _json_value(v))
                   for k, v in config.items()},
    }


def cmd_montecarlo(args):
    cfg, out, runs_out, fmt_name = build_config(args)
    summary = run_monte_carlo(cfg)
    doc = json.dumps(summary_document(summary, cfg), indent=2, sort_keys=True) + "\n"
    rows = [{
        "run": r.run_index, "mse_constrained": r.mse_constrained,
        "mse_least_squares": r.mse_least_squares, "iterations": r.iterations,
        "termination": r.termination_reason, "constraint_value": r.constraint_value,
        "error": r.error,
    } for r in summary.per_run_records]
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(doc)
        if runs_out is None:
            suffix = ".csv" if fmt_name == "csv" else ".jsonl"
            runs_out = Path(out).with_name(Path(out).stem + ".runs" + suffix)
        write_records(runs_out, rows, RUN_COLUMNS, fmt_name)
    else:
        sys.stdout.write(doc)
    return EXIT_OK


def cmd_verify(args):
    if not args.perturb_weights > 0:
        raise ValidationError("--perturb-weights must be positive")
    results = run_suite(seed=args.seed or 0, quick=args.quick, perturb=args.perturb_weights)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"error: property: failed {','.join(failed)}", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def _add_common(p, with_mc):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=["paper"], help="reference parameters (also the defaults)")
    src.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    if with_mc:
        p.add_argument("--mc", type=int, help="number of Monte Carlo runs")
        p.add_argument("--workers", type=int)
        p.add_argument("--runs-out", help="per-run records (default: next to --out)")
    p.add_argument("--q", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n", type=int, help="number of measurements")
    p.add_argument("--noise-var", type=float)
    p.add_argument("--start", choices=START_KINDS)
    p.add_argument("--tol", type=float, help="relative objective tolerance")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=FORMATS)


def make_parser():
    parser = argparse.ArgumentParser(prog="marks-surrogate",
                                     description="Surrogate-based solvers for group l_q constrained least squares.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="one constrained solve, writes the iteration trace")
    _add_common(p, with_mc=False)
    p.add_argument("--instance", help=".npz file with arrays A, y and optionally group_sizes")
    p.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for reproducible files")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("montecarlo", help="Monte Carlo comparison with least squares")
    _add_common(p, with_mc=True)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    p.add_argument("--perturb-weights", type=float, default=1.0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MonteCarloError as exc:
        print(f"error: solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SurrogateError as exc:
        print(f"error: solver: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
