"""Difference orders {0} vs {0,1,2} and one vs three scales on the synthetic
benchmark, median over seeds.

    python scripts/ablation.py --out runs/ablation
"""
import argparse
import json
import logging

from dmgnn.experiments import DIRECTION_MATRIX, HORIZONS_MS, generalization_config, run_ablation, synthetic_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--matrix", help="JSON matrix (default: the built-in direction check)")
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--steps", type=int, help="override the matrix step count")
    p.add_argument("--out", help="directory for per-variant checkpoints and the table")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    logging.getLogger("dmgnn.experiments").setLevel(logging.INFO)
    matrix = dict(DIRECTION_MATRIX if args.matrix is None else json.load(open(args.matrix)))
    if args.steps is not None:
        matrix["steps"] = args.steps
    base = generalization_config()
    train_w, test_w, interval = synthetic_benchmark(0, args.train, args.test)
    report, errors = run_ablation(base, matrix, train_w, test_w, interval, HORIZONS_MS, args.out)
    print(report.to_text(), end="")
    for name, msg in errors.items():
        print(f"{name}: invalid variant ({msg})")


if __name__ == "__main__":
    main()
