import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feri.errors import ContractError, UndefinedMetricError
from feri.metrics import (ScoredPredictions, auprc, auroc, demographic_parity, equalized_odds,
                          fairness_report, format_percent, mean_sd, percent_reduction)


def preds(yhat, labels, groups):
    # decisions enter as scores 0.9 / 0.1 around the 0.5 threshold
    return ScoredPredictions(np.where(np.asarray(yhat) == 1, 0.9, 0.1), labels, groups)


# -- brute-force oracles ---------------------------------------------------------

def dp_oracle(yhat, groups):
    rates = []
    for g in sorted(set(groups)):
        members = [i for i in range(len(groups)) if groups[i] == g]
        rates.append(sum(yhat[i] for i in members) / len(members))
    return max(rates) - min(rates)


def eo_oracle(yhat, labels, groups):
    tpr, fpr = [], []
    for g in sorted(set(groups)):
        tp = fn = fp = tn = 0
        for i in range(len(groups)):
            if groups[i] != g:
                continue
            if labels[i] == 1:
                tp += yhat[i] == 1
                fn += yhat[i] == 0
            else:
                fp += yhat[i] == 1
                tn += yhat[i] == 0
        tpr.append(tp / (tp + fn))
        fpr.append(fp / (fp + tn))
    return (max(tpr) - min(tpr)) + (max(fpr) - min(fpr))


def auroc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def auprc_oracle(scores, labels):
    """Sweep each distinct threshold from high to low."""
    n_pos = sum(labels)
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        chosen = [y for s, y in zip(scores, labels) if s >= t]
        recall = sum(chosen) / n_pos
        precision = sum(chosen) / len(chosen)
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total


def random_case(rng):
    n = int(rng.integers(4, 21))
    n_groups = int(rng.integers(2, 4))
    # coarse scores so that ties are common
    scores = np.round(rng.random(n), int(rng.integers(1, 3)))
    labels = rng.integers(0, 2, n)
    groups = rng.integers(0, n_groups, n)
    return scores, labels, groups


def test_fairness_metrics_match_counting_oracles():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 1000:
        scores, labels, groups = random_case(rng)
        p = ScoredPredictions(scores, labels, groups)
        yhat = (scores >= 0.5).astype(int).tolist()
        assert demographic_parity(p) == dp_oracle(yhat, groups.tolist())
        complete = all({0, 1} <= set(labels[groups == g].tolist()) for g in set(groups.tolist()))
        if complete:
            assert abs(equalized_odds(p) - eo_oracle(yhat, labels.tolist(), groups.tolist())) <= 1e-15
        else:
            with pytest.raises(UndefinedMetricError):
                equalized_odds(p)
        checked += 1


def test_ranking_metrics_match_pairwise_and_sweep_oracles():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 1000:
        scores, labels, _ = random_case(rng)
        if labels.min() == labels.max():
            continue
        assert abs(auroc(scores, labels) - auroc_oracle(scores.tolist(), labels.tolist())) <= 1e-12
        assert abs(auprc(scores, labels) - auprc_oracle(scores.tolist(), labels.tolist())) <= 1e-12
        checked += 1


# -- fixtures ---------------------------------------------------------------------

def test_demographic_parity_examples():
    labels = np.zeros(20, int)
    groups = np.repeat([0, 1], 10)
    yhat = np.r_[[1] * 6 + [0] * 4, [1] * 4 + [0] * 6]
    assert abs(demographic_parity(preds(yhat, labels, groups)) - 0.2) < 1e-15
    four = np.repeat([0, 1, 2, 3], 10)
    yhat4 = np.concatenate([[1] * k + [0] * (10 - k) for k in (5, 4, 3, 2)])
    assert abs(demographic_parity(preds(yhat4, np.zeros(40, int), four)) - 0.3) < 1e-15
    assert demographic_parity(preds(np.r_[yhat[:10], yhat[:10]], labels, groups)) == 0


def test_equalized_odds_examples():
    # group 0: TPR 4/5, FPR 3/10; group 1: TPR 3/5, FPR 1/10
    labels = np.r_[[1] * 5 + [0] * 10, [1] * 5 + [0] * 10]
    groups = np.repeat([0, 1], 15)
    yhat = np.r_[[1] * 4 + [0] + [1] * 3 + [0] * 7, [1] * 3 + [0] * 2 + [1] + [0] * 9]
    assert abs(equalized_odds(preds(yhat, labels, groups)) - 0.4) < 1e-15
    assert equalized_odds(preds(labels, labels, groups)) == 0
    assert equalized_odds(preds(np.ones(30, int), labels, groups)) == 0


def test_auroc_examples():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


def test_auprc_examples():
    assert abs(auprc([0.9, 0.8, 0.7], [1, 0, 1]) - (0.5 + (2 / 3) * 0.5)) < 1e-15
    assert abs(auprc([0.9, 0.8, 0.7], [1, 0, 1]) - 0.8333) < 1e-4
    assert auprc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert auprc([0.2, 0.5, 0.1], [1, 1, 1]) == 1.0
    with pytest.raises(UndefinedMetricError):
        auprc([0.1, 0.2], [0, 0])


def test_undefined_rates_are_explicit():
    p = ScoredPredictions([0.9, 0.2, 0.7], [1, 0, 1], [0, 0, 1])
    with pytest.raises(UndefinedMetricError, match="group 1"):
        equalized_odds(p)
    empty = ScoredPredictions([0.9, 0.2], [1, 0], [0, 0], group_ids=[0, 1])
    with pytest.raises(UndefinedMetricError, match="group 1"):
        demographic_parity(empty)


def test_prediction_contracts():
    with pytest.raises(ContractError):
        ScoredPredictions([0.1], [2], [0])
    with pytest.raises(ContractError):
        ScoredPredictions([0.1, 0.2], [0], [0])
    with pytest.raises(ContractError):
        ScoredPredictions([0.1], [0], [5], group_ids=[0, 1])


def test_threshold_is_inclusive():
    p = ScoredPredictions([0.5, 0.49], [1, 0], [0, 0])
    assert p.decisions.tolist() == [1, 0]


def test_report_collects_rates():
    labels = np.array([1, 0, 1, 0])
    r = fairness_report(ScoredPredictions([0.9, 0.6, 0.2, 0.1], labels, [0, 0, 1, 1]))
    assert r.positive_rate == {0: 1.0, 1: 0.0}
    assert r.tpr == {0: 1.0, 1: 0.0} and r.fpr == {0: 1.0, 1: 0.0}
    assert r.demographic_parity == 1.0 and r.equalized_odds == 2.0


def test_percent_reduction_reports():
    assert format_percent(percent_reduction(0.0046, 0.0013)) == "71.74%"
    assert format_percent(percent_reduction(0.0833, 0.0496)) == "40.46%"
    with pytest.raises(UndefinedMetricError):
        percent_reduction(0.0, 0.1)


def test_mean_sd_uses_sample_deviation():
    mu, sd = mean_sd([1.0, 2.0, 3.0, 4.0, 5.0])
    assert mu == 3.0 and abs(sd - np.sqrt(2.5)) < 1e-15
    assert mean_sd([2.0]) == (2.0, 0.0)


# -- properties ----------------------------------------------------------------------

case = st.integers(2, 20).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
))


@settings(max_examples=200, deadline=None)
@given(case)
def test_ranking_metric_properties(c):
    scores, labels = np.array(c[0]), np.array(c[1])
    if labels.min() == labels.max():
        return
    a = auroc(scores, labels)
    assert 0.0 <= a <= 1.0
    # reversing the scores mirrors the curve
    assert abs(auroc(-scores, labels) - (1 - a)) <= 1e-12
    # an exact order-preserving rescale keeps both metrics
    assert auroc(scores * 2, labels) == a
    ap = auprc(scores, labels)
    assert auprc(scores * 2, labels) == ap
    assert 0.0 < ap <= 1.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 20).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 2), min_size=n, max_size=n))))
def test_fairness_metrics_are_label_permutation_free(c):
    scores, labels, groups = map(np.array, c)
    p = ScoredPredictions(scores, labels, groups)
    dp = demographic_parity(p)
    assert 0.0 <= dp <= 1.0
    # renaming groups changes nothing
    q = ScoredPredictions(scores, labels, 2 - groups)
    assert demographic_parity(q) == dp
