"""Command-line front end: ``pnpbo {run,grid,check,oracle,plotdata}``.

Exit codes: 0 success, 2 bad input (config, files, schema), 3 diverged run,
4 every grid cell diverged, 5 infeasible step-size certificate.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import oracle as _oracle
from ..exceptions import DivergedError, InfeasibleError, NoConvergenceError, ParseError
from ..rng import derive_seed
from ..solver import TRACE_COLUMNS, run
from ..theory import build_ledger, check_biased, check_unbiased, coefficients_for, suggest_steps
from . import plotdata as _plotdata
from .config import build_problem, load_config, solver_config, theory_inputs
from .grid import GridSpec, leaderboard_csv, run_grid

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_ALL_DIVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4, 5

log = logging.getLogger("pnpbo")


def _out_dir(args, cfg):
    out = args.out or cfg.get("output", "dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _final_row(trace):
    if not len(trace):
        return {}
    return {c: v for c, v in zip(TRACE_COLUMNS, trace.rows[-1]) if v is not None}


def _summary(cfg, config, trace, status):
    return {
        "algorithm": config.name,
        "config_hash": cfg.hash(),
        "seed": config.seed,
        "status": status,
        "steps": {k: getattr(config, k) for k in ("alpha", "beta", "gamma")},
        "final": _final_row(trace),
        "diverged_at": trace.diverged_at,
    }


# -- subcommands -------------------------------------------------------------------------
def cmd_run(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    out = _out_dir(args, cfg)
    base = solver_config(cfg, problem, seed=args.seed, cadence=args.cadence)
    if args.timing:
        base = base.replace(timing=True)
    code = EXIT_OK
    summaries = []
    for r in range(args.repeats):
        config = base if args.repeats == 1 else base.replace(seed=derive_seed(base.seed, r))
        suffix = "" if args.repeats == 1 else f"_r{r}"
        try:
            trace = run(problem, config)
            status = "ok"
        except DivergedError as err:
            trace, status, code = err.trace, "diverged", EXIT_DIVERGED
            log.error("run diverged at iteration %d", err.iteration)
        trace.to_csv(os.path.join(out, f"trace{suffix}.csv"))
        np.savez(os.path.join(out, f"final{suffix}.npz"), x=trace.final.x, y=trace.final.y, z=trace.final.z)
        summaries.append(_summary(cfg, config, trace, status))
    if args.repeats == 1:
        summary = summaries[0]
    else:
        summary = {"config_hash": cfg.hash(), "seed": base.seed, "repeats": summaries, "aggregate": {}}
        for col in ("gradH_sq", "f_val", "g_val", "test_metric"):
            vals = [s["final"][col] for s in summaries if col in s["final"]]
            if vals:
                summary["aggregate"][col] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    _write_json(os.path.join(out, "summary.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return code


def grid_spec(cfg):
    g = cfg.sections.get("grid", {})
    kw = {k: tuple(g[k]) for k in ("alpha", "phi", "kappa", "one_minus_p", "rho_bar") if k in g}
    if "metric" in g:
        kw["metric"] = g["metric"]
    try:
        return GridSpec(**kw)
    except ValueError as err:
        raise ParseError(str(err), path=cfg.path) from err


def cmd_grid(args):
    cfg = load_config(args.config)
    spec = grid_spec(cfg)
    problem = build_problem(cfg)
    base = solver_config(cfg, problem, seed=args.seed, cadence=args.cadence)
    out = _out_dir(args, cfg)
    rows = run_grid(build_problem, cfg, base, spec, workers=args.workers)
    with open(os.path.join(out, "leaderboard.csv"), "w", newline="") as fh:
        fh.write(leaderboard_csv(rows))
    if args.traces:
        for r in rows:
            with open(os.path.join(out, f"trace_cell{r['cell']}.csv"), "w", newline="") as fh:
                fh.write(r["trace"])
    ok = [r for r in rows if r["status"] == "ok"]
    summary = {
        "config_hash": cfg.hash(), "seed": base.seed, "algorithm": base.name,
        "cells": len(rows), "diverged": sum(r["status"] == "diverged" for r in rows),
        "metric": spec.metric,
        "best": None if not ok else {k: ok[0][k] for k in ("cell", "alpha", "beta", "gamma", "one_minus_p",
                                                           "rho_bar", "seed", "metric", "samples")},
    }
    _write_json(os.path.join(out, "grid_summary.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    if not ok:
        log.error("all %d grid cells diverged", len(rows))
        return EXIT_ALL_DIVERGED
    return EXIT_OK


def cmd_check(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg) if cfg.has("problem") else None
    params, n, m = theory_inputs(cfg, problem)
    ledger = build_ledger(params, n, m)
    t = dict(cfg.sections.get("solver", {}))
    t.update(cfg.sections.get("theory", {}))
    algorithm = t.get("algorithm", "SPABA")
    N = n + m
    try:
        coeffs, b, p, rho_bar, rho = coefficients_for(
            ledger, algorithm, N, batch=t.get("batch"), p=t.get("p"), rho_bar=t.get("rho_bar"), rho=t.get("rho")
        )
    except ValueError as err:
        raise ParseError(str(err), path=cfg.path) from err
    names = ("alpha", "beta", "gamma")
    steps = [t.get(k, 0.0) for k in names]
    cert = None
    if "suggest" in steps:
        try:
            sug = suggest_steps(ledger, algorithm, N, batch=b, p=p, rho_bar=rho_bar, rho=rho)
            steps = [getattr(sug, k) if s == "suggest" else s for k, s in zip(names, steps)]
        except InfeasibleError as err:
            cert = err.certificate
    if cert is None:
        if coeffs.regime == "biased":
            cert = check_biased(ledger, steps, coeffs)
        else:
            cert = check_unbiased(ledger, steps, rho, coeffs)
    if not args.json_only:
        print(cert.table())
    for line in cert.json_lines():
        print(line)
    return EXIT_OK if cert.feasible else EXIT_INFEASIBLE


def _load_checkpoint(path):
    try:
        if path.endswith(".npz"):
            with np.load(path) as data:
                return np.asarray(data["x"], dtype=float)
        if path.endswith(".npy"):
            return np.asarray(np.load(path), dtype=float)
        if path.endswith(".json"):
            with open(path) as fh:
                return np.asarray(json.load(fh)["x"], dtype=float)
        return np.loadtxt(path, dtype=float, ndmin=1)
    except (OSError, KeyError, ValueError) as err:
        raise ParseError(f"cannot read checkpoint: {err}", path=path) from err


def cmd_oracle(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    x = _load_checkpoint(args.checkpoint)
    if x.shape != (problem.dim_x,):
        raise ParseError(f"checkpoint has shape {x.shape}, problem needs ({problem.dim_x},)", path=args.checkpoint)
    method = "gd" if problem.quadratic_ll else "newton-cg"
    config = _oracle.OracleConfig(method=method)
    y, z, grad = _oracle.solve_all(problem, x, config)
    result = {
        "config_hash": cfg.hash(),
        "gradH": grad.tolist(),
        "gradH_sq": float(grad @ grad),
        "H": problem.f(x, y),
        "ll_residual": float(np.linalg.norm(problem.grad_y_g(x, y))),
        "z_norm": float(np.linalg.norm(z)),
    }
    if args.out:
        _write_json(args.out, result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_plotdata(args):
    labels = args.labels.split(",") if args.labels else None
    try:
        rows = _plotdata.merge(args.traces, labels=labels, points=args.points)
    except ValueError as err:
        if isinstance(err, ParseError):
            raise
        raise ParseError(str(err)) from err
    text = _plotdata.to_csv(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(prog="pnpbo", description="Single-loop stochastic bilevel solver")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out", help="output directory (default: [output] dir or ./out)")
        if seed:
            p.add_argument("--seed", type=int, help="override [solver] seed")
            p.add_argument("--cadence", type=int, help="record metrics every N steps")

    p = sub.add_parser("run", help="run one configuration")
    common(p)
    p.add_argument("--repeats", type=int, default=1, help="independent repeats with derived seeds")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="grid search over step sizes")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--traces", action="store_true", help="also write every cell's trace")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("check", help="certify step sizes against the declared constants")
    p.add_argument("--config", required=True)
    p.add_argument("--json-only", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("oracle", help="exact hypergradient at a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True, help=".npz (key x), .npy, .json (key x) or text")
    p.add_argument("--out", help="write the JSON result here")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("plotdata", help="merge traces into a long-format CSV")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out")
    p.add_argument("--labels", help="comma-separated algorithm labels, one per trace")
    p.add_argument("--points", type=int, help="downsample each trace to at most this many rows")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TypeError, NoConvergenceError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
