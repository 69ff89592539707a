#!/usr/bin/env python3
"""Run the oscillating-cylinder benchmark and print the summary."""

import argparse
import json

from chimera2d.bench import bench_moving_cylinder


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--algorithm", default="chimera_w",
                    choices=["chimera_w", "chimera_s"])
    ap.add_argument("--level", type=int, default=3)
    ap.add_argument("--n-theta", type=int, default=48)
    ap.add_argument("--n-rings", type=int, default=5)
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--t-end", type=float, default=8.0)
    ap.add_argument("--outdir", default=None)
    args = ap.parse_args()

    res = bench_moving_cylinder(
        algorithm=args.algorithm,
        level=args.level,
        n_theta=args.n_theta,
        n_rings=args.n_rings,
        dt=args.dt,
        t_end=args.t_end,
        outdir=args.outdir,
    )
    print(json.dumps(res.summary, indent=2, default=float))


if __name__ == "__main__":
    main()
