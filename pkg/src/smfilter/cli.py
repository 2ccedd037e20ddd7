"""Command-line interface.

Subcommands:
  simulate     Monte Carlo filter experiment driven by a config file
  mvee         enclosing ellipsoid of a CSV point cloud, JSON to stdout
  bench        solver timing table over standard-uniform clouds
  sweep-sigma  posterior-size-vs-prior-size single-update study

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import (
    RunConfig,
    affine_fit_r2,
    bench_mvee,
    emit_outputs,
    parse_config,
    run_experiment,
    sweep_sigma,
    write_bench_csv,
    write_sweep_csv,
)
from .mvee import fw_solve


def _int_list(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smfilter",
        description="Set-membership filtering toolkit with ellipsoidal bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo filter experiment")
    sim.add_argument("--config", help="config file (flat key=value; [scenario] section)")
    sim.add_argument("--scenario", choices=["radar", "robot"])
    sim.add_argument("--filters", help="comma list from dsmf,esmf,ukf")
    sim.add_argument("--runs", type=int)
    sim.add_argument("--steps", type=int)
    sim.add_argument("--seed", type=int, dest="master_seed")
    sim.add_argument("--out", dest="out_dir")
    sim.add_argument("--timing", action="store_true",
                     help="serialize wall-clock timings (breaks byte-identical outputs)")

    mv = sub.add_parser("mvee", help="enclose a CSV point cloud")
    mv.add_argument("--points", required=True, help="CSV, one point per row, no header")
    mv.add_argument("--tol", type=float, default=1e-7)
    mv.add_argument("--max-iter", type=int, default=None)

    be = sub.add_parser("bench", help="solver timing table")
    be.add_argument("--n", type=_int_list, default=[2, 6])
    be.add_argument("--m", type=_int_list,
                    default=[50, 100, 200, 400, 600, 800, 1000])
    be.add_argument("--trials", type=int, default=20)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--out", default=".")

    sw = sub.add_parser("sweep-sigma", help="posterior size vs prior size study")
    sw.add_argument("--from", dest="sigma_from", type=float, default=5.0)
    sw.add_argument("--to", dest="sigma_to", type=float, default=50.0)
    sw.add_argument("--step", dest="sigma_step", type=float, default=5.0)
    sw.add_argument("--replicates", type=int, default=50)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--out", default=".")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.config:
        config = parse_config(args.config)
    else:
        config = RunConfig()
    updates = {}
    if args.scenario:
        updates["scenario"] = args.scenario
    if args.filters:
        updates["filters"] = tuple(
            s.strip() for s in args.filters.split(",") if s.strip()
        )
    for key in ("runs", "steps", "master_seed", "out_dir"):
        val = getattr(args, key)
        if val is not None:
            updates[key] = val
    if args.timing:
        updates["record_timing"] = True
    if updates:
        config = dataclasses.replace(config, **updates)
    return config.validate()


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    result = run_experiment(config)
    emit_outputs(result, config.out_dir)
    agg = {
        name: {
            "containment_rate": round(float(np.mean([
                log.filters[name].contained.mean() for log in result.runs
            ])), 6),
            "failures": result.failures[name],
        }
        for name in config.filters
    }
    print(json.dumps({"out_dir": config.out_dir, "runs": config.runs,
                      "aggregate": agg}, indent=2, sort_keys=True))
    return 0


def cmd_mvee(args) -> int:
    path = Path(args.points)
    if not path.exists():
        raise ConfigError(f"points file {path} does not exist")
    try:
        pts = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from None
    sol = fw_solve(pts, tol=args.tol, max_iter=args.max_iter)
    out = {
        "center": sol.ellipsoid.center.tolist(),
        "shape": sol.ellipsoid.shape.tolist(),
        "gap": sol.duality_gap,
        "iterations": sol.iterations,
        "converged": sol.converged,
    }
    print(json.dumps(out))
    return 0


def cmd_bench(args) -> int:
    rows = bench_mvee(args.n, args.m, args.trials, master_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_bench_csv(rows, out / "bench.csv")
    print(json.dumps({"csv": str(path), "cells": rows}, indent=2))
    return 0


def cmd_sweep_sigma(args) -> int:
    if args.sigma_step <= 0 or args.sigma_to < args.sigma_from:
        raise ConfigError("need step > 0 and to >= from")
    sigmas = np.arange(args.sigma_from, args.sigma_to + 0.5 * args.sigma_step,
                       args.sigma_step)
    rows = sweep_sigma(sigmas, replicates=args.replicates, master_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_sweep_csv(rows, out / "sigma_sweep.csv")
    slope_new, _, _ = affine_fit_r2([r["sigma"] for r in rows],
                                    [r["dsmf_logdet"] for r in rows])
    slope_lin, _, _ = affine_fit_r2([r["sigma"] for r in rows],
                                    [r["esmf_logdet"] for r in rows])
    print(json.dumps({
        "csv": str(path),
        "dsmf_slope": slope_new,
        "esmf_slope": slope_lin,
    }, indent=2))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "mvee": cmd_mvee,
        "bench": cmd_bench,
        "sweep-sigma": cmd_sweep_sigma,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
