"""Command-line entry point: ``feri run|grid|synth|metrics``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .data import synth_generate, write_csv
from .errors import FeriError
from .harness import grid_search, load_config, parse_kv, run_experiment, summary_text, synth_spec_from_kv, write_grid
from .metrics import ScoredPredictions, auprc, auroc, fairness_report


def _cmd_run(args):
    config = load_config(args.config)
    result = run_experiment(config, eval_split=args.split)
    sys.stdout.write(summary_text(result))
    return 0


def _cmd_grid(args):
    config = load_config(args.config)
    points = grid_search(config)
    path = write_grid(points, config.out_dir)
    best = points[0]
    print(f"{len(points)} grid points written to {path}")
    print(f"best: gamma={best.gamma:g} beta={best.beta:g} equalized_odds={best.equalized_odds:.4f} "
          f"auroc={best.auroc:.4f}")
    return 0


def _cmd_synth(args):
    path = Path(args.spec)
    if not path.exists():
        raise FeriError(f"spec file {str(path)!r} not found")
    kv = parse_kv(path.read_text(encoding="utf-8"))
    stray = [k for k in kv if not k.startswith("synth.")]
    if stray:
        raise FeriError(f"spec file accepts only synth.* keys, got {', '.join(stray)}")
    dataset = synth_generate(synth_spec_from_kv(kv))
    write_csv(dataset, args.out)
    rates = [dataset.label[dataset.group == g].mean() for g in range(dataset.n_tasks)]
    print(f"wrote {len(dataset)} rows to {args.out} ("
          + ", ".join(f"{n}: n={int((dataset.group == g).sum())} rate={r:.4f}"
                      for g, (n, r) in enumerate(zip(dataset.group_names, rates))) + ")")
    return 0


def read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"score", "label", "group"} - set(reader.fieldnames or ())
        if missing:
            raise FeriError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        scores, labels, groups = [], [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                scores.append(float(row["score"]))
                labels.append(int(row["label"]))
            except ValueError:
                raise FeriError(f"{path}: line {lineno}: bad score or label") from None
            groups.append(row["group"])
    if not scores:
        raise FeriError(f"{path}: no rows")
    return np.array(scores), np.array(labels), np.array(groups)


def _cmd_metrics(args):
    scores, labels, groups = read_predictions(args.predictions)
    preds = ScoredPredictions(scores, labels, groups, args.threshold)
    report = fairness_report(preds)
    print(f"demographic_parity,{report.demographic_parity:.9g}")
    print(f"equalized_odds,{report.equalized_odds:.9g}")
    for g in preds.group_ids:
        mask = groups == g
        print(f"auroc[{g}],{auroc(scores[mask], labels[mask]):.9g}")
        print(f"auprc[{g}],{auprc(scores[mask], labels[mask]):.9g}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="feri", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="cross-validated baseline vs FERI experiment")
    p.add_argument("config")
    p.add_argument("--split", choices=("test", "validation"), default="test")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("grid", help="gamma x logit-rate grid search on the validation split")
    p.add_argument("config")
    p.set_defaults(func=_cmd_grid)
    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("spec")
    p.add_argument("out")
    p.set_defaults(func=_cmd_synth)
    p = sub.add_parser("metrics", help="fairness and ranking metrics for a score,label,group CSV")
    p.add_argument("predictions")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FeriError, OSError, ValueError) as exc:
        reason = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"feri {args.command}: {reason}", file=sys.stderr)
        return 1
