"""Command-line front end.

Subcommands:
  simulate <config>     run a simulation described by a config file
  bench <name> [flags]  run one of the built-in benchmarks
  validate <config>     parse and validate a config file

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .bench import (
    bench_dfg2d2,
    bench_moving_cylinder,
    bench_segre,
    parse_config,
    write_outputs,
)
from .fracstep import SolverError
from .mesh import MeshError
from .orchestrator import ConfigError, Simulation, run_simulation


def _add_bench_flags(p):
    p.add_argument("--algorithm", default=None)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--n-theta", type=int, default=None)
    p.add_argument("--n-rings", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--outdir", default=None)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="chimera2d", description="overset-mesh particulate flow solver"
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a config-file simulation")
    sim.add_argument("config")
    sim.add_argument("--outdir", default=None, help="override [output] outdir")
    sim.add_argument("--resume", default=None, help="checkpoint file to restart from")

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("config")

    ben = sub.add_parser("bench", help="run a built-in benchmark")
    bsub = ben.add_subparsers(dest="benchmark", required=True)

    dfg = bsub.add_parser("dfg2d2", help="channel cylinder vortex shedding")
    _add_bench_flags(dfg)
    dfg.add_argument("--transient-time", type=float, default=20.0)
    dfg.add_argument("--n-periods", type=int, default=3)

    mov = bsub.add_parser("moving-cylinder", help="driven oscillating cylinder")
    _add_bench_flags(mov)
    mov.add_argument("--transient-time", type=float, default=None)

    seg = bsub.add_parser("segre", help="lateral migration in channel flow")
    _add_bench_flags(seg)
    seg.add_argument("--reynolds", type=float, default=12.0)
    seg.add_argument("--particle-diameter", type=float, default=0.10)
    seg.add_argument("--channel-length", type=float, default=5.0)
    seg.add_argument("--base-ny", type=int, default=None)
    seg.add_argument("--release-x", type=float, default=1.0)
    seg.add_argument("--release-r", type=float, default=0.25)
    seg.add_argument("--equilibrium-threshold", type=float, default=1e-3)
    return ap


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def cmd_simulate(args):
    cfg, _ = parse_config(args.config)
    if args.outdir is not None:
        cfg.outdir = args.outdir
    records, sim = run_simulation(cfg, resume_from=args.resume)
    paths = write_outputs(records, cfg, outdir=cfg.outdir)
    print(f"completed {len(records)} records to t={records[-1].t:g}")
    for p in paths:
        print(p)
    return 0


def cmd_validate(args):
    cfg, bench = parse_config(args.config)
    Simulation(cfg)  # builds meshes and spaces; catches geometry errors
    print(f"ok: {args.config}")
    return 0


def cmd_bench(args):
    common = _drop_none(
        {
            "algorithm": args.algorithm,
            "level": args.level,
            "n_theta": args.n_theta,
            "n_rings": args.n_rings,
            "dt": args.dt,
            "t_end": args.t_end,
            "outdir": args.outdir,
        }
    )
    if args.benchmark == "dfg2d2":
        result = bench_dfg2d2(
            transient_time=args.transient_time, n_periods=args.n_periods, **common
        )
    elif args.benchmark == "moving-cylinder":
        result = bench_moving_cylinder(transient_time=args.transient_time, **common)
    else:
        extra = _drop_none({"base_ny": args.base_ny})
        result = bench_segre(
            reynolds=args.reynolds,
            particle_diameter=args.particle_diameter,
            channel_length=args.channel_length,
            release_x=args.release_x,
            release_r=args.release_r,
            equilibrium_threshold=args.equilibrium_threshold,
            **extra,
            **common,
        )
    print(json.dumps({"benchmark": result.benchmark, "summary": result.summary}, indent=2))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "validate":
            return cmd_validate(args)
        return cmd_bench(args)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
