#!/usr/bin/env python3
"""Compare momentum settings for the sign-ascent loop."""

import argparse
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


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--etas", type=float, nargs="+",
                    default=[0.0, 0.2, 0.4, 0.6, 0.7, 0.8])
    ap.add_argument("--region", type=int, default=4)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--height", type=int, default=16)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--pool-period", type=int, default=4)
    ap.add_argument("--model-seed", type=int, default=123)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--budget", type=int, default=50_000)
    ap.add_argument("--gamma", type=float, default=0.02)
    args = ap.parse_args(argv)

    spec = ModelSpec(kind="mlp", height=args.height, width=args.width, channels=1,
                     classes=args.classes, hidden=(args.hidden,),
                     pool_period=args.pool_period)
    model = generate_local_model(spec, seed=args.model_seed)
    x0 = gray_image(*model.input_dims)

    # each arm reuses the same (target, seed) grid so the medians are
    # comparable run for run
    print(f"{'eta':>6} {'rate':>6} {'q_med':>8} {'q_mean':>8} {'iters_med':>10}")
    for eta in args.etas:
        queries, iters, wins, total = [], [], 0, 0
        for target in range(args.classes):
            for seed in range(args.seeds):
                cfg = AttackConfig(
                    query_budget=args.budget, target=target,
                    region=(args.region, args.region),
                    eta=eta, gamma=args.gamma, seed=seed,
                )
                r = attack_full_info(x0, model, cfg, QueryLedger(budget=args.budget))
                total += 1
                if r.success:
                    wins += 1
                    queries.append(r.queries)
                    iters.append(r.iterations)
        if queries:
            print(f"{eta:>6.2f} {wins / total:>6.2f} {np.median(queries):>8.0f} "
                  f"{np.mean(queries):>8.1f} {np.median(iters):>10.0f}")
        else:
            print(f"{eta:>6.2f} {wins / total:>6.2f} {'-':>8} {'-':>8} {'-':>10}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
