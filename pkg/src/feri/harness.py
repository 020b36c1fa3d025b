"""Cross-validated experiments: training both arms, scoring, reports and grid search."""
from __future__ import annotations

import concurrent.futures as cf
import csv
import io
import itertools
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, SynthSpec, Standardizer, kfold_split, load_csv, synth_generate
from .errors import ConfigError, DivergenceError, FeriError, UndefinedMetricError
from .metrics import (ScoredPredictions, auprc, auroc, demographic_parity, equalized_odds,
                      format_percent, mean_sd, percent_reduction)
from .model import FeatureSchema, ModelConfig, init_params, predict
from .optim import FeriHyper, FeriState, train_epoch_baseline, train_epoch_feri

ARMS = ("baseline", "feri")
DEFAULT_GAMMA_GRID = tuple(10.0 ** e for e in range(-9, -1))
DEFAULT_BETA_GRID = (0.05, 0.08, 0.10, 0.11, 0.15)


def fmt(x) -> str:
    """Floats in artifacts: 9 significant digits."""
    return f"{float(x):.9g}"


@dataclass
class ExperimentConfig:
    source: str = "synth"
    data_path: Optional[str] = None
    schema: Optional[FeatureSchema] = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    attribute: str = "age_group"
    group_names: Optional[Tuple[str, ...]] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    hyper: FeriHyper = field(default_factory=FeriHyper)
    epochs: int = 300
    k: int = 5
    seed: int = 42
    arms: Tuple[str, ...] = ARMS
    out_dir: str = "out"
    threshold: float = 0.5
    gamma_grid: Tuple[float, ...] = DEFAULT_GAMMA_GRID
    beta_grid: Tuple[float, ...] = DEFAULT_BETA_GRID

    def __post_init__(self):
        self.arms = tuple(self.arms)
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if not self.arms:
            raise ConfigError("at least one arm must be selected")
        unknown = set(self.arms) - set(ARMS)
        if unknown:
            raise ConfigError(f"unknown arm(s) {sorted(unknown)}; choose from {ARMS}")
        if self.source not in ("synth", "csv"):
            raise ConfigError(f"data.source must be 'synth' or 'csv', got {self.source!r}")
        if self.source == "csv":
            if not self.data_path or not os.path.exists(self.data_path):
                raise ConfigError(f"data.path {self.data_path!r} does not exist")
            if self.schema is None:
                raise ConfigError("a csv source needs data.categorical / data.continuous")


@dataclass(frozen=True)
class Seeds:
    data: int
    split: int
    init: Tuple[int, ...]

    @classmethod
    def expand(cls, master: int, k: int) -> "Seeds":
        """One master seed -> data, split and per-fold init seeds (shared by both arms)."""
        ss = np.random.SeedSequence(master)
        data, split, init = ss.spawn(3)
        init_seeds = tuple(int(s.generate_state(1)[0]) for s in init.spawn(k))
        return cls(int(data.generate_state(1)[0]), int(split.generate_state(1)[0]), init_seeds)


def load_dataset(config: ExperimentConfig, seeds: Seeds) -> Dataset:
    if config.source == "csv":
        return load_csv(config.data_path, config.schema, config.attribute, config.group_names)
    return synth_generate(replace(config.synth, seed=seeds.data))


@dataclass
class ArmRun:
    arm: str
    fold: int
    losses: np.ndarray  # (epochs, M), task losses at the start of each epoch
    weights: np.ndarray  # (epochs, M)
    coefficients: np.ndarray  # (epochs, M)
    logits: np.ndarray  # (epochs + 1, M)
    scores: np.ndarray  # eval-split probabilities
    eval_index: np.ndarray
    failure: Optional[str] = None

    @property
    def ok(self):
        return self.failure is None


def train_arm(arm: str, train: Dataset, params, hyper: FeriHyper, epochs: int):
    """Run ``epochs`` epochs of one arm; returns (params, losses, weights, coefficients, logits)."""
    M = params.n_tasks
    losses = np.empty((epochs, M))
    weights = np.empty((epochs, M))
    coeffs = np.empty((epochs, M))
    logits = np.zeros((epochs + 1, M))
    state = FeriState.initial(M, hyper)
    for t in range(epochs):
        if arm == "feri":
            params, state, res = train_epoch_feri(params, state, train, t)
            logits[t + 1] = state.logits
        else:
            params, res = train_epoch_baseline(params, train, hyper.alpha, hyper.max_grad_norm, t)
        losses[t] = res.losses_before
        weights[t] = res.weights_used
        coeffs[t] = res.coefficients
    return params, losses, weights, coeffs, logits


def run_fold(config: ExperimentConfig, dataset: Dataset, fold_index: int, split, arm: str,
             init_seed: int, eval_split: str = "test") -> ArmRun:
    stats = Standardizer.fit(dataset, split.train)
    data = stats.apply(dataset)
    train = data.subset(split.train)
    eval_idx = split.test if eval_split == "test" else split.validation
    params = init_params(dataset.schema, config.model, dataset.n_tasks, init_seed)
    M, E = dataset.n_tasks, config.epochs
    try:
        params, losses, weights, coeffs, logits = train_arm(arm, train, params, config.hyper, E)
    except DivergenceError as exc:
        nan = np.full((E, M), np.nan)
        return ArmRun(arm, fold_index, nan, nan, nan, np.full((E + 1, M), np.nan),
                      np.empty(0), eval_idx, failure=str(exc))
    scores = predict(params, data.subset(eval_idx))
    return ArmRun(arm, fold_index, losses, weights, coeffs, logits, scores, eval_idx)


@dataclass
class FoldMetrics:
    arm: str
    fold: int
    demographic_parity: float
    equalized_odds: float
    auroc: Dict[int, float]
    auprc: Dict[int, float]
    failure: Optional[str] = None


def score_run(run: ArmRun, dataset: Dataset, threshold: float) -> FoldMetrics:
    M = dataset.n_tasks
    if not run.ok:
        nan = {m: float("nan") for m in range(M)}
        return FoldMetrics(run.arm, run.fold, float("nan"), float("nan"), nan, dict(nan), run.failure)
    labels = dataset.label[run.eval_index]
    groups = dataset.group[run.eval_index]
    preds = ScoredPredictions(run.scores, labels, groups, threshold, group_ids=range(M))
    roc, prc = {}, {}
    for m in range(M):
        mask = groups == m
        try:
            roc[m] = auroc(run.scores[mask], labels[mask])
        except UndefinedMetricError:
            roc[m] = float("nan")
        try:
            prc[m] = auprc(run.scores[mask], labels[mask])
        except UndefinedMetricError:
            prc[m] = float("nan")
    try:
        dp = demographic_parity(preds)
    except UndefinedMetricError:
        dp = float("nan")
    try:
        eo = equalized_odds(preds)
    except UndefinedMetricError:
        eo = float("nan")
    return FoldMetrics(run.arm, run.fold, dp, eo, roc, prc)


# -- config files -----------------------------------------------------------------

def benchmark_config(**overrides) -> ExperimentConfig:
    """The fixed synthetic benchmark: default SynthSpec, master seed 42, alpha 0.1, logit rate 5.

    Both rates were picked by a validation-split search (see scripts/calibrate_beta.py);
    under full-batch epochs the logit gradient is O(1e-3), so rates in 0.05-0.15
    leave the task weights practically uniform.
    """
    base = dict(hyper=FeriHyper(alpha=0.1, beta=5.0, gamma=1e-6), epochs=300, k=5, seed=42)
    base.update(overrides)
    return ExperimentConfig(**base)


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _rows(text):
    return tuple(_floats(row) for row in text.split(";"))


_SYNTH_PARSERS = {
    "group_names": _names, "counts": _ints, "rates": _floats, "label_shift": _rows,
    "group_offset": _rows, "cat_tilt": _floats, "cardinalities": _ints, "n_cont": int,
    "noise": float, "missing_rate": float, "seed": int, "attribute_name": str,
}


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def synth_spec_from_kv(kv: Dict[str, str], base: Optional[SynthSpec] = None) -> SynthSpec:
    fields = {}
    for key, value in kv.items():
        if not key.startswith("synth."):
            continue
        name = key[len("synth."):]
        if name not in _SYNTH_PARSERS:
            raise ConfigError(f"unknown synth key {key!r}")
        try:
            fields[name] = _SYNTH_PARSERS[name](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    spec = base or SynthSpec()
    if "n_cont" in fields and "label_shift" not in fields:
        n = fields["n_cont"]
        fields["label_shift"] = tuple((0.5,) * n for _ in fields.get("group_names", spec.group_names))
    if "n_cont" in fields and "group_offset" not in fields:
        n = fields["n_cont"]
        fields["group_offset"] = tuple((0.0,) * n for _ in fields.get("group_names", spec.group_names))
    return replace(spec, **fields)


_TOP_KEYS = {
    "data.source", "data.path", "data.categorical", "data.continuous", "data.groups", "attribute",
    "model.embed_dim", "model.hidden", "model.head", "opt.alpha", "opt.beta", "opt.gamma",
    "opt.epsilon", "opt.max_grad_norm", "train.epochs", "cv.k", "seed", "arms", "out_dir",
    "eval.threshold", "grid.gamma", "grid.beta",
}


def load_config(path) -> ExperimentConfig:
    """Read a flat ``key = value`` file; relative paths resolve against the file's directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} not found")
    kv = parse_kv(path.read_text(encoding="utf-8"))
    unknown = [k for k in kv if k not in _TOP_KEYS and not k.startswith("synth.")]
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    def rel(p):
        return str(p) if os.path.isabs(p) else str(path.parent / p)

    try:
        hyper = FeriHyper(
            alpha=float(kv.get("opt.alpha", 0.05)), beta=float(kv.get("opt.beta", 0.1)),
            gamma=float(kv.get("opt.gamma", 1e-6)), epsilon=float(kv.get("opt.epsilon", 1e-8)),
            max_grad_norm=float(kv.get("opt.max_grad_norm", 1.0)),
        )
        model = ModelConfig(
            embed_dim=int(kv.get("model.embed_dim", 8)),
            hidden=_ints(kv["model.hidden"]) if "model.hidden" in kv else (64, 32),
            head=_ints(kv["model.head"]) if "model.head" in kv else (16, 1),
        )
        schema = None
        if "data.categorical" in kv or "data.continuous" in kv:
            cats = []
            for item in _names(kv.get("data.categorical", "")):
                name, _, card = item.partition(":")
                cats.append((name, int(card)))
            schema = FeatureSchema(tuple(cats), _names(kv.get("data.continuous", "")))
        cfg = ExperimentConfig(
            source=kv.get("data.source", "synth"),
            data_path=rel(kv["data.path"]) if "data.path" in kv else None,
            schema=schema,
            synth=synth_spec_from_kv(kv),
            attribute=kv.get("attribute", "age_group"),
            group_names=_names(kv["data.groups"]) if "data.groups" in kv else None,
            model=model,
            hyper=hyper,
            epochs=int(kv.get("train.epochs", 300)),
            k=int(kv.get("cv.k", 5)),
            seed=int(kv.get("seed", 42)),
            arms=_names(kv.get("arms", "baseline,feri")),
            out_dir=rel(kv.get("out_dir", "out")),
            threshold=float(kv.get("eval.threshold", 0.5)),
            gamma_grid=_floats(kv["grid.gamma"]) if "grid.gamma" in kv else DEFAULT_GAMMA_GRID,
            beta_grid=_floats(kv["grid.beta"]) if "grid.beta" in kv else DEFAULT_BETA_GRID,
        )
    except ValueError as exc:
        if isinstance(exc, FeriError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


# -- experiment ------------------------------------------------------------------------

@dataclass
class TrainingTrace:
    rows: List[Tuple[str, int, int, int, float, float]] = field(default_factory=list)

    def sorted(self) -> "TrainingTrace":
        return TrainingTrace(sorted(self.rows, key=lambda r: (r[0], r[1], r[2], r[3])))

    @classmethod
    def from_runs(cls, runs: Sequence[ArmRun]) -> "TrainingTrace":
        rows = []
        for run in runs:
            if not run.ok:
                continue
            E, M = run.losses.shape
            for t in range(E):
                for m in range(M):
                    rows.append((run.arm, run.fold, t, m, float(run.losses[t, m]), float(run.weights[t, m])))
        return cls(rows).sorted()


TRACE_HEADER = ["arm", "fold", "epoch", "task", "loss", "weight"]


def trace_csv(trace: TrainingTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for arm, fold, epoch, task, loss, weight in trace.sorted().rows:
        w.writerow([arm, fold, epoch, task, fmt(loss), fmt(weight)])
    return buf.getvalue()


def export_trace(trace: TrainingTrace, path):
    if not trace.rows:
        raise ValueError("cannot export an empty trace")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(trace_csv(trace))


def read_trace(path) -> TrainingTrace:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        if next(r, None) != TRACE_HEADER:
            raise ValueError(f"{path}: not a trace file")
        rows = [(a, int(f), int(e), int(t), float(l), float(w)) for a, f, e, t, l, w in r]
    return TrainingTrace(rows)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    dataset: Dataset
    runs: List[ArmRun]
    metrics: List[FoldMetrics]
    eval_split: str = "test"

    def by_arm(self, arm) -> List[FoldMetrics]:
        return sorted((m for m in self.metrics if m.arm == arm), key=lambda m: m.fold)

    def run(self, arm, fold) -> ArmRun:
        return next(r for r in self.runs if r.arm == arm and r.fold == fold)

    def mean_metric(self, arm, name) -> float:
        values = [getattr(m, name) for m in self.by_arm(arm) if m.failure is None]
        return mean_sd(values)[0] if values else float("nan")

    def mean_subgroup(self, arm, name, m) -> float:
        values = [getattr(fm, name)[m] for fm in self.by_arm(arm) if fm.failure is None]
        values = [v for v in values if not np.isnan(v)]
        return mean_sd(values)[0] if values else float("nan")

    def loss_gap(self, arm, last=50, tasks=(0, 1)) -> float:
        """Mean over the final ``last`` epochs and all folds of |L_a - L_b|."""
        a, b = tasks
        gaps = [np.mean(np.abs(r.losses[-last:, a] - r.losses[-last:, b]))
                for r in self.runs if r.arm == arm and r.ok]
        return float(np.mean(gaps)) if gaps else float("nan")


def _worker_count(n_jobs):
    cap = os.environ.get("FERI_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"FERI_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(limit, n_jobs))


def _job(args):
    return run_fold(*args)


def evaluate(config: ExperimentConfig, eval_split: str = "test") -> ExperimentResult:
    """Train every (fold, arm) pair and score the chosen split; nothing is written."""
    if eval_split not in ("test", "validation"):
        raise ConfigError(f"eval split must be 'test' or 'validation', got {eval_split!r}")
    seeds = Seeds.expand(config.seed, config.k)
    dataset = load_dataset(config, seeds)
    plan = kfold_split(dataset, config.k, seeds.split)
    jobs = [(config, dataset, f + 1, split, arm, seeds.init[f], eval_split)
            for f, split in enumerate(plan.folds) for arm in config.arms]
    workers = _worker_count(len(jobs))
    if workers == 1:
        runs = [_job(j) for j in jobs]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_job, jobs))
    order = {a: i for i, a in enumerate(ARMS)}
    runs.sort(key=lambda r: (order[r.arm], r.fold))
    metrics = [score_run(r, dataset, config.threshold) for r in runs]
    return ExperimentResult(config, dataset, runs, metrics, eval_split)


def _reduction(base, feri):
    if base is None or np.isnan(base) or np.isnan(feri):
        return ""
    try:
        return format_percent(percent_reduction(base, feri))
    except UndefinedMetricError:
        return ""


def _cell(x):
    return "" if x is None or np.isnan(x) else fmt(x)


def results_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "fold", "demographic_parity", "equalized_odds", "dp_reduction", "eo_reduction", "status"])
    base = {m.fold: m for m in result.by_arm("baseline")}
    summary = {}
    for arm in (a for a in ARMS if a in result.config.arms):
        rows = result.by_arm(arm)
        for m in rows:
            b = base.get(m.fold) if arm == "feri" else None
            w.writerow([arm, m.fold, _cell(m.demographic_parity), _cell(m.equalized_odds),
                        _reduction(b.demographic_parity if b else None, m.demographic_parity),
                        _reduction(b.equalized_odds if b else None, m.equalized_odds),
                        "ok" if m.failure is None else f"failed: {m.failure}"])
        ok = [m for m in rows if m.failure is None]
        dp = mean_sd([m.demographic_parity for m in ok]) if ok else (float("nan"), float("nan"))
        eo = mean_sd([m.equalized_odds for m in ok]) if ok else (float("nan"), float("nan"))
        summary[arm] = (dp, eo, len(ok))
    for arm, (dp, eo, n_ok) in summary.items():
        b = summary.get("baseline") if arm == "feri" else None
        w.writerow([arm, "mean", _cell(dp[0]), _cell(eo[0]),
                    _reduction(b[0][0] if b else None, dp[0]), _reduction(b[1][0] if b else None, eo[0]),
                    f"n={n_ok}"])
        w.writerow([arm, "sd", _cell(dp[1]), _cell(eo[1]), "", "", f"n={n_ok}"])
    return buf.getvalue()


def accuracy_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "fold", "subgroup", "auroc", "auprc", "status"])
    names = result.dataset.group_names
    arms = [a for a in ARMS if a in result.config.arms]
    for arm in arms:
        for fm in result.by_arm(arm):
            for m, name in enumerate(names):
                w.writerow([arm, fm.fold, name, _cell(fm.auroc[m]), _cell(fm.auprc[m]),
                            "ok" if fm.failure is None else f"failed: {fm.failure}"])
    for arm in arms:
        ok = [fm for fm in result.by_arm(arm) if fm.failure is None]
        for m, name in enumerate(names):
            roc = [fm.auroc[m] for fm in ok if not np.isnan(fm.auroc[m])]
            prc = [fm.auprc[m] for fm in ok if not np.isnan(fm.auprc[m])]
            r = mean_sd(roc) if roc else (float("nan"),) * 2
            p = mean_sd(prc) if prc else (float("nan"),) * 2
            w.writerow([arm, "mean", name, _cell(r[0]), _cell(p[0]), f"n={len(roc)}"])
            w.writerow([arm, "sd", name, _cell(r[1]), _cell(p[1]), f"n={len(roc)}"])
    return buf.getvalue()


def summary_text(result: ExperimentResult) -> str:
    cfg, ds = result.config, result.dataset
    arms = [a for a in ARMS if a in cfg.arms]
    h = cfg.hyper
    lines = [
        f"attribute: {ds.attribute_name}  groups: {', '.join(ds.group_names)}  samples: {len(ds)}",
        f"epochs: {cfg.epochs}  folds: {cfg.k}  seed: {cfg.seed}  evaluated on: {result.eval_split}",
        f"alpha={h.alpha:g} beta={h.beta:g} gamma={h.gamma:g} epsilon={h.epsilon:g} max_grad_norm={h.max_grad_norm:g}",
        "",
        "Fairness (smaller is fairer)",
        f"{'fold':>6}" + "".join(f"  {a + ' DP':>12}" for a in arms) + "".join(f"  {a + ' EO':>12}" for a in arms),
    ]
    per_arm = {a: result.by_arm(a) for a in arms}
    for f in range(1, cfg.k + 1):
        cells = []
        for key in ("demographic_parity", "equalized_odds"):
            for a in arms:
                m = next((x for x in per_arm[a] if x.fold == f), None)
                v = getattr(m, key) if m else float("nan")
                cells.append(f"  {v:12.4f}")
        lines.append(f"{f:>6}" + "".join(cells))
    cells = []
    for key in ("demographic_parity", "equalized_odds"):
        for a in arms:
            vals = [getattr(m, key) for m in per_arm[a] if m.failure is None]
            mu, sd = mean_sd(vals) if vals else (float("nan"), float("nan"))
            cells.append(f"  {mu:.4f}±{sd:.4f}".rjust(14))
    lines.append(f"{'mean':>6}" + "".join(cells))
    if set(arms) == set(ARMS):
        for key, label in (("demographic_parity", "demographic parity"), ("equalized_odds", "equalized odds")):
            b, f_ = result.mean_metric("baseline", key), result.mean_metric("feri", key)
            red = _reduction(b, f_) or "n/a"
            lines.append(f"reduction in {label}: {red}")
    lines += ["", "Accuracy per subgroup (mean over folds)"]
    for name_key, label in (("auroc", "AUROC"), ("auprc", "AUPRC")):
        for m, gname in enumerate(ds.group_names):
            vals = {a: result.mean_subgroup(a, name_key, m) for a in arms}
            row = f"{label} {gname:<12}" + "".join(f"  {a}={v:.4f}" for a, v in vals.items())
            if set(arms) == set(ARMS):
                row += f"  |delta|={abs(vals['feri'] - vals['baseline']):.4f}"
            lines.append(row)
    if ds.n_tasks == 2:
        lines += ["", "Mean |L_0 - L_1| over the final 50 epochs"]
        for a in arms:
            lines.append(f"  {a}: {result.loss_gap(a):.6f}")
    failures = [m for m in result.metrics if m.failure]
    if failures:
        lines += ["", "Failures"] + [f"  {m.arm} fold {m.fold}: {m.failure}" for m in failures]
    return "\n".join(lines) + "\n"


def write_artifacts(result: ExperimentResult, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trace": out / "trace.csv", "results": out / "results.csv",
             "accuracy": out / "accuracy.csv", "summary": out / "summary.txt"}
    trace = TrainingTrace.from_runs(result.runs)
    if trace.rows:
        export_trace(trace, paths["trace"])
    else:
        paths["trace"].write_text(",".join(TRACE_HEADER) + "\n", encoding="utf-8")
    paths["results"].write_text(results_csv(result), encoding="utf-8")
    paths["accuracy"].write_text(accuracy_csv(result), encoding="utf-8")
    paths["summary"].write_text(summary_text(result), encoding="utf-8")
    return paths


def run_experiment(config: ExperimentConfig, eval_split: str = "test") -> ExperimentResult:
    result = evaluate(config, eval_split)
    write_artifacts(result, config.out_dir)
    return result


# -- grid search --------------------------------------------------------------------------

@dataclass
class GridPoint:
    gamma: float
    beta: float
    demographic_parity: float
    equalized_odds: float
    auroc: float
    auprc: float
    failure: Optional[str] = None
    rank: int = 0


def _grid_point(config, gamma, beta) -> GridPoint:
    cfg = replace(config, hyper=replace(config.hyper, gamma=gamma, beta=beta), arms=("feri",))
    try:
        res = evaluate(cfg, eval_split="validation")
    except FeriError as exc:
        nan = float("nan")
        return GridPoint(gamma, beta, nan, nan, nan, nan, str(exc))
    ok = [m for m in res.metrics if m.failure is None]
    if not ok:
        nan = float("nan")
        return GridPoint(gamma, beta, nan, nan, nan, nan, res.metrics[0].failure)
    roc = [v for m in ok for v in m.auroc.values() if not np.isnan(v)]
    prc = [v for m in ok for v in m.auprc.values() if not np.isnan(v)]
    return GridPoint(gamma, beta,
                     float(np.mean([m.demographic_parity for m in ok])),
                     float(np.mean([m.equalized_odds for m in ok])),
                     float(np.mean(roc)) if roc else float("nan"),
                     float(np.mean(prc)) if prc else float("nan"),
                     None if len(ok) == len(res.metrics) else f"{len(res.metrics) - len(ok)} fold(s) failed")


def rank_grid(points: Sequence[GridPoint]) -> List[GridPoint]:
    """Equalized odds ascending, then AUROC descending, ties by smaller gamma then smaller beta."""
    def key(p):
        bad = p.failure is not None and np.isnan(p.equalized_odds)
        eo = np.inf if np.isnan(p.equalized_odds) else p.equalized_odds
        roc = -np.inf if np.isnan(p.auroc) else p.auroc
        return (bad, eo, -roc, p.gamma, p.beta)
    ranked = sorted(points, key=key)
    for i, p in enumerate(ranked, start=1):
        p.rank = i
    return ranked


def grid_search(config: ExperimentConfig, gamma_grid=None, beta_grid=None) -> List[GridPoint]:
    gammas = tuple(config.gamma_grid if gamma_grid is None else gamma_grid)
    betas = tuple(config.beta_grid if beta_grid is None else beta_grid)
    if not gammas or not betas:
        raise ConfigError("grid search needs non-empty gamma and beta grids")
    points = [_grid_point(config, g, b) for g, b in itertools.product(gammas, betas)]
    return rank_grid(points)


GRID_HEADER = ["rank", "gamma", "beta", "demographic_parity", "equalized_odds", "auroc", "auprc", "status"]


def grid_csv(points: Sequence[GridPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_HEADER)
    for p in sorted(points, key=lambda p: p.rank):
        w.writerow([p.rank, fmt(p.gamma), fmt(p.beta), _cell(p.demographic_parity), _cell(p.equalized_odds),
                    _cell(p.auroc), _cell(p.auprc), "ok" if p.failure is None else f"failed: {p.failure}"])
    return buf.getvalue()


def write_grid(points: Sequence[GridPoint], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "grid.csv"
    path.write_text(grid_csv(points), encoding="utf-8")
    return path
