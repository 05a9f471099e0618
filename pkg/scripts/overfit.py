"""Memorise 8 synthetic sequences with the reduced model and report the
loss curve per seed.

    python scripts/overfit.py --seeds 0 1 2 3 4 --steps 2000
"""
import argparse
import json

from dmgnn.experiments import overfit, overfit_config


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--sequences", type=int, default=8)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--full", action="store_true", help="keep training after the threshold is reached")
    p.add_argument("--log", help="write per-seed loss curves to this JSON file")
    args = p.parse_args()
    curves = {}
    for seed in args.seeds:
        cfg = overfit_config(seed, **{"train.steps": args.steps, "train.lr": args.lr})
        r = overfit(seed, args.sequences, args.threshold, cfg, stop_early=not args.full)
        curves[seed] = r.losses
        hit = "never" if r.reached_at is None else f"step {r.reached_at}"
        print(f"seed {seed}: best loss {r.best:.5f}, final {r.losses[-1]:.5f}, "
              f"below {args.threshold} at {hit}, {r.seconds:.0f} s", flush=True)
    if args.log:
        with open(args.log, "w") as fh:
            json.dump(curves, fh)


if __name__ == "__main__":
    main()
