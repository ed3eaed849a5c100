#!/usr/bin/env python3
"""Run one parameter sweep (k, U or encoding_ratio) on an existing dataset and print mean per grid point.

    python3 scripts/sweep.py --axis U --dataset runs/desk/data --out runs/sweep_U --seeds 0,1,2
"""

import argparse
from collections import defaultdict

import numpy as np

from cfdiff import harness
from cfdiff.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--config", default=None)
    ap.add_argument("--seeds", default="0", help="comma-separated evaluation seeds")
    ap.add_argument("--eval-size", type=int, default=None)
    args = ap.parse_args()

    overrides = {"eval__seeds": tuple(int(s) for s in args.seeds.split(","))}
    if args.eval_size is not None:
        overrides["eval__size"] = args.eval_size
    cfg = load_config(args.config, **overrides)
    res = harness.cmd_sweep(cfg, args.axis, args.out, dataset_dir=args.dataset)

    by_value = defaultdict(list)
    for r in res["rows"]:
        by_value[res["values"][r["method"]]].append(r)
    print(f"{args.axis:>8} {'frechet':>10} {'dice':>7} {'ind_err':>8} {'mae':>8}")
    for v in sorted(by_value):
        rs = by_value[v]
        print(f"{v:>8} {np.mean([r['frechet'] for r in rs]):>10.4f} {np.mean([r['dice'] for r in rs]):>7.3f} "
              f"{np.mean([r['indirect_error'] for r in rs]):>8.2f} {np.mean([r['healthy_mae'] for r in rs]):>8.4f}")


if __name__ == "__main__":
    main()
