#!/usr/bin/env python3
"""Run the lateral-migration (tubular pinch) benchmark and print the summary."""

import argparse
import json

from chimera2d.bench import bench_segre


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reynolds", type=float, default=12.0)
    ap.add_argument("--particle-diameter", type=float, default=0.10)
    ap.add_argument("--channel-length", type=float, default=5.0)
    ap.add_argument("--algorithm", default="chimera_s",
                    choices=["chimera_w", "chimera_s", "fbm"])
    ap.add_argument("--level", type=int, default=1)
    ap.add_argument("--base-ny", type=int, default=20)
    ap.add_argument("--dt", type=float, default=None)
    ap.add_argument("--t-end", type=float, default=200.0)
    ap.add_argument("--release-r", type=float, default=0.25)
    ap.add_argument("--outdir", default=None)
    args = ap.parse_args()

    res = bench_segre(
        reynolds=args.reynolds,
        particle_diameter=args.particle_diameter,
        channel_length=args.channel_length,
        algorithm=args.algorithm,
        level=args.level,
        base_ny=args.base_ny,
        dt=args.dt,
        t_end=args.t_end,
        release_r=args.release_r,
        outdir=args.outdir,
    )
    print(json.dumps(res.summary, indent=2, default=float))


if __name__ == "__main__":
    main()
