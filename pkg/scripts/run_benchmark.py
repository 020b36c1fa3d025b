"""Baseline vs FERI on the fixed synthetic benchmark, 5 folds x 5 master seeds (test split).

Usage: python3 scripts/run_benchmark.py [--seeds 42,43,44,45,46] [--out out/benchmark]
"""
import argparse
import time

import numpy as np

from feri.harness import benchmark_config, evaluate, write_artifacts
from feri.metrics import format_percent, percent_reduction


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="42,43,44,45,46")
    ap.add_argument("--out", default=None, help="write per-seed artifacts under this directory")
    args = ap.parse_args()
    start = time.perf_counter()
    results = []
    for seed in (int(s) for s in args.seeds.split(",")):
        res = evaluate(benchmark_config(seed=seed))
        results.append(res)
        if args.out:
            write_artifacts(res, f"{args.out}/seed{seed}")
    elapsed = time.perf_counter() - start

    def avg(fn):
        return float(np.mean([fn(r) for r in results]))

    stats = {}
    for arm in ("baseline", "feri"):
        stats[arm] = dict(
            dp=avg(lambda r: r.mean_metric(arm, "demographic_parity")),
            eo=avg(lambda r: r.mean_metric(arm, "equalized_odds")),
            gap=avg(lambda r: r.loss_gap(arm)),
            roc=[avg(lambda r: r.mean_subgroup(arm, "auroc", m)) for m in (0, 1)],
            prc=[avg(lambda r: r.mean_subgroup(arm, "auprc", m)) for m in (0, 1)],
        )
        s = stats[arm]
        print(f"{arm:<9} DP {s['dp']:.4f}  EO {s['eo']:.4f}  loss gap {s['gap']:.4f}  "
              f"AUROC {s['roc'][0]:.3f}/{s['roc'][1]:.3f}  AUPRC {s['prc'][0]:.3f}/{s['prc'][1]:.3f}")
    b, f = stats["baseline"], stats["feri"]
    print(f"DP reduction {format_percent(percent_reduction(b['dp'], f['dp']))}  "
          f"EO reduction {format_percent(percent_reduction(b['eo'], f['eo']))}  ({elapsed:.0f} s)")


if __name__ == "__main__":
    main()
