#!/usr/bin/env python3
"""Run the channel-cylinder vortex-shedding benchmark and print the summary."""

import argparse
import json

from chimera2d.bench import bench_dfg2d2


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--algorithm", default="chimera_w",
                    choices=["chimera_w", "chimera_s", "fbm", "body_fitted"])
    ap.add_argument("--level", type=int, default=2)
    ap.add_argument("--n-theta", type=int, default=64)
    ap.add_argument("--n-rings", type=int, default=6)
    ap.add_argument("--dt", type=float, default=0.005)
    ap.add_argument("--t-end", type=float, default=25.0)
    ap.add_argument("--transient", type=float, default=20.0)
    ap.add_argument("--outdir", default=None)
    args = ap.parse_args()

    res = bench_dfg2d2(
        algorithm=args.algorithm,
        level=args.level,
        n_theta=args.n_theta,
        n_rings=args.n_rings,
        dt=args.dt,
        t_end=args.t_end,
        transient_time=args.transient,
        outdir=args.outdir,
    )
    print(json.dumps(res.summary, indent=2, default=float))


if __name__ == "__main__":
    main()
