"""Sweep the model rate alpha and the logit rate beta on the validation split.

Usage: python3 scripts/calibrate_beta.py [--alphas 0.05,0.1] [--betas 0.1,5,10] [--seeds 100,101,102]

Only validation-split metrics are reported; seeds default to ones disjoint from the
benchmark's (42-46) so the chosen setting is not tuned on test data.
"""
import argparse

import numpy as np

from feri.harness import benchmark_config, evaluate
from feri.optim import FeriHyper


def summarise(results, arm):
    return dict(
        dp=np.mean([r.mean_metric(arm, "demographic_parity") for r in results]),
        eo=np.mean([r.mean_metric(arm, "equalized_odds") for r in results]),
        gap=np.mean([r.loss_gap(arm) for r in results]),
        roc=[np.mean([r.mean_subgroup(arm, "auroc", m) for r in results]) for m in (0, 1)],
    )


def line(label, s):
    roc = " ".join(f"{v:.3f}" for v in s["roc"])
    return f"{label:<16} DP {s['dp']:.4f}  EO {s['eo']:.4f}  gap {s['gap']:.4f}  AUROC {roc}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", default="0.05,0.1,0.15")
    ap.add_argument("--betas", default="0.1,2,5,10,20")
    ap.add_argument("--seeds", default="100,101,102")
    ap.add_argument("--epochs", type=int, default=300)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    for alpha in (float(a) for a in args.alphas.split(",")):
        base = [evaluate(benchmark_config(seed=s, epochs=args.epochs, arms=("baseline",),
                                          hyper=FeriHyper(alpha=alpha)), "validation") for s in seeds]
        print(line(f"alpha={alpha:g} base", summarise(base, "baseline")), flush=True)
        for beta in (float(b) for b in args.betas.split(",")):
            hyper = FeriHyper(alpha=alpha, beta=beta, gamma=1e-6)
            runs = [evaluate(benchmark_config(seed=s, epochs=args.epochs, arms=("feri",), hyper=hyper),
                             "validation") for s in seeds]
            print(line(f"  beta={beta:g}", summarise(runs, "feri")), flush=True)


if __name__ == "__main__":
    main()
