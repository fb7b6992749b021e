#!/usr/bin/env python3
"""Sweep tiled-region sizes on a synthetic classifier.

Runs the full-information attack once per (size, target, seed) cell and
prints a per-size table of success rate and query cost. Useful for
eyeballing how much of the query budget the low-dimensional search
saves before trusting the automatic size picker.
"""

import argparse
import json
import sys

import numpy as np

from regionattack import (
    AttackConfig,
    ModelSpec,
    QueryLedger,
    attack_full_info,
    generate_local_model,
    gray_image,
)


def run_arm(model, size, targets, seeds, args):
    rows = []
    for target in targets:
        for seed in seeds:
            cfg = AttackConfig(
                query_budget=args.budget, target=target, region=(size, size),
                n=args.n, eta=args.eta, gamma=args.gamma, seed=seed,
            )
            r = attack_full_info(gray_image(*model.input_dims), model, cfg,
                                 QueryLedger(budget=args.budget))
            rows.append({"size": size, "target": target, "seed": seed,
                         "success": r.success, "queries": r.queries})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--height", type=int, default=16)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--pool-period", type=int, default=4)
    ap.add_argument("--model-seed", type=int, default=123)
    ap.add_argument("--seeds", type=int, default=5, help="attack seeds per target")
    ap.add_argument("--budget", type=int, default=50_000)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--eta", type=float, default=0.4)
    ap.add_argument("--gamma", type=float, default=0.02)
    ap.add_argument("--json", help="also dump raw rows to this file")
    args = ap.parse_args(argv)

    spec = ModelSpec(kind="mlp", height=args.height, width=args.width, channels=1,
                     classes=args.classes, hidden=(args.hidden,),
                     pool_period=args.pool_period)
    model = generate_local_model(spec, seed=args.model_seed)

    targets = list(range(args.classes))
    seeds = list(range(args.seeds))
    all_rows = []
    print(f"{'size':>6} {'rate':>6} {'q_med':>8} {'q_mean':>8} {'q_max':>8}")
    for size in args.sizes:
        rows = run_arm(model, size, targets, seeds, args)
        all_rows.extend(rows)
        qs = [r["queries"] for r in rows if r["success"]]
        rate = sum(r["success"] for r in rows) / len(rows)
        if qs:
            print(f"{size:>6} {rate:>6.2f} {np.median(qs):>8.0f} "
                  f"{np.mean(qs):>8.1f} {max(qs):>8}")
        else:
            print(f"{size:>6} {rate:>6.2f} {'-':>8} {'-':>8} {'-':>8}")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(all_rows, fh, indent=2)
        print(f"rows written to {args.json}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
