"""Per-subgroup training-loss trajectories for both arms (the data behind a loss-vs-epoch plot).

Usage: python3 scripts/loss_trajectories.py [--fold 1] [--out out/trajectories.csv]
"""
import argparse
import os

from feri.harness import Seeds, TrainingTrace, benchmark_config, export_trace, load_dataset, run_fold
from feri.data import kfold_split


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fold", type=int, default=1)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="out/trajectories.csv")
    args = ap.parse_args()
    config = benchmark_config(seed=args.seed)
    seeds = Seeds.expand(config.seed, config.k)
    dataset = load_dataset(config, seeds)
    split = kfold_split(dataset, config.k, seeds.split).folds[args.fold - 1]
    runs = [run_fold(config, dataset, args.fold, split, arm, seeds.init[args.fold - 1]) for arm in config.arms]
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    export_trace(TrainingTrace.from_runs(runs), args.out)
    names = dataset.group_names
    print(f"{'epoch':>5}" + "".join(f"  {a[:4]}:{n[:5]:>6}" for a in config.arms for n in names))
    for t in list(range(0, config.epochs, 25)) + [config.epochs - 1]:
        print(f"{t:>5}" + "".join(f"  {r.losses[t, m]:>11.4f}" for r in runs for m in range(len(names))))
    print(f"trace written to {args.out}")


if __name__ == "__main__":
    main()
