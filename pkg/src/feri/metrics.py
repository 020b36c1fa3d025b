"""Group fairness (demographic parity, equalized odds) and ranking metrics (AUROC, AUPRC)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError


@dataclass
class ScoredPredictions:
    scores: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    threshold: float = 0.5
    group_ids: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.groups = np.asarray(self.groups)
        if not (self.scores.shape == self.labels.shape == self.groups.shape) or self.scores.ndim != 1:
            raise ContractError("scores, labels and groups must be 1-D arrays of equal length")
        if not 0.0 < self.threshold < 1.0:
            raise ContractError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ContractError("labels must be 0/1")
        if self.group_ids is None:
            self.group_ids = sorted(np.unique(self.groups).tolist())
        else:
            self.group_ids = list(self.group_ids)
            stray = set(np.unique(self.groups).tolist()) - set(self.group_ids)
            if stray:
                raise ContractError(f"group ids {sorted(stray)} not in the declared group set")

    @property
    def decisions(self) -> np.ndarray:
        return (self.scores >= self.threshold).astype(np.int64)


@dataclass
class FairnessReport:
    demographic_parity: float
    equalized_odds: float
    positive_rate: Dict[int, float] = field(default_factory=dict)
    tpr: Dict[int, float] = field(default_factory=dict)
    fpr: Dict[int, float] = field(default_factory=dict)


def _rate(decisions, mask, what):
    n = int(mask.sum())
    if n == 0:
        raise UndefinedMetricError(what)
    return float(decisions[mask].sum()) / n


def positive_rates(p: ScoredPredictions) -> Dict[int, float]:
    yhat = p.decisions
    return {g: _rate(yhat, p.groups == g, f"group {g!r} is empty") for g in p.group_ids}


def true_positive_rates(p: ScoredPredictions) -> Dict[int, float]:
    yhat = p.decisions
    return {g: _rate(yhat, (p.groups == g) & (p.labels == 1), f"group {g!r} has no positive samples; TPR undefined")
            for g in p.group_ids}


def false_positive_rates(p: ScoredPredictions) -> Dict[int, float]:
    yhat = p.decisions
    return {g: _rate(yhat, (p.groups == g) & (p.labels == 0), f"group {g!r} has no negative samples; FPR undefined")
            for g in p.group_ids}


def _spread(rates: Dict[int, float]) -> float:
    values = list(rates.values())
    return max(values) - min(values)


def demographic_parity(p: ScoredPredictions) -> float:
    """Largest gap in predicted-positive rate between any two groups."""
    return _spread(positive_rates(p))


def equalized_odds(p: ScoredPredictions) -> float:
    """TPR gap plus FPR gap, each taken as max minus min over groups."""
    return _spread(true_positive_rates(p)) + _spread(false_positive_rates(p))


def fairness_report(p: ScoredPredictions) -> FairnessReport:
    pos, tpr, fpr = positive_rates(p), true_positive_rates(p), false_positive_rates(p)
    return FairnessReport(_spread(pos), _spread(tpr) + _spread(fpr), pos, tpr, fpr)


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError("scores and labels must be 1-D arrays of equal length")
    return scores, labels


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate: P(random positive outscores random negative), ties count one half."""
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative sample")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of (R_k - R_{k-1}) * P_k."""
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive sample")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    seen = np.arange(1, y.size + 1)
    # last position of each run of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), y.size - 1]
    tp, seen = tp[ends], seen[ends]
    precision = tp / seen
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def percent_reduction(baseline: float, feri: float) -> float:
    """(baseline - feri) / baseline, in percent."""
    if baseline == 0:
        raise UndefinedMetricError("percent reduction is undefined for a zero baseline")
    return 100.0 * (baseline - feri) / baseline


def format_percent(value: float) -> str:
    return f"{value:.2f}%"


def mean_sd(values) -> tuple:
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise UndefinedMetricError("no values to aggregate")
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), sd
