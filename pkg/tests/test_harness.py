import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from feri import harness
from feri.data import SynthSpec, kfold_split
from feri.errors import ConfigError, DivergenceError
from feri.harness import (DEFAULT_BETA_GRID, DEFAULT_GAMMA_GRID, ExperimentConfig, ExperimentResult, FoldMetrics,
                          GridPoint, Seeds, TrainingTrace, evaluate, export_trace, grid_csv, grid_search,
                          load_config, load_dataset, parse_kv, rank_grid, read_trace, results_csv, run_fold,
                          write_artifacts)
from feri.metrics import mean_sd
from feri.optim import FeriHyper

SMALL = SynthSpec(counts=(120, 40))


def small_config(tmp_path, **kw):
    base = dict(synth=SMALL, epochs=6, k=5, seed=3, hyper=FeriHyper(alpha=0.1, beta=5.0),
                out_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_result(tmp_path_factory):
    return evaluate(small_config(tmp_path_factory.mktemp("r")))


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_results_row_count(small_result):
    table = rows(results_csv(small_result))
    folds = [r for r in table if r["fold"].isdigit()]
    assert len(folds) == 2 * 5
    assert [(r["arm"], r["fold"]) for r in table if not r["fold"].isdigit()] == [
        ("baseline", "mean"), ("baseline", "sd"), ("feri", "mean"), ("feri", "sd")]


def test_mean_sd_rows_are_consistent(small_result):
    for arm in ("baseline", "feri"):
        ok = small_result.by_arm(arm)
        for key in ("demographic_parity", "equalized_odds"):
            values = [getattr(m, key) for m in ok]
            mu, sd = mean_sd(values)
            assert abs(mu - np.mean(values)) <= 1e-12
            assert abs(sd - np.std(values, ddof=1)) <= 1e-12
    # the serialised rows agree to the 9 printed digits
    table = rows(results_csv(small_result))
    for arm in ("baseline", "feri"):
        folds = [float(r["equalized_odds"]) for r in table if r["arm"] == arm and r["fold"].isdigit()]
        mean = next(float(r["equalized_odds"]) for r in table if r["arm"] == arm and r["fold"] == "mean")
        sd = next(float(r["equalized_odds"]) for r in table if r["arm"] == arm and r["fold"] == "sd")
        assert mean == pytest.approx(np.mean(folds), rel=1e-8, abs=1e-12)
        assert sd == pytest.approx(np.std(folds, ddof=1), rel=1e-7, abs=1e-12)


def test_reruns_are_byte_identical(tmp_path):
    cfg = small_config(tmp_path, epochs=3)
    a = write_artifacts(evaluate(cfg), tmp_path / "a")
    b = write_artifacts(evaluate(cfg), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = small_config(tmp_path, epochs=3, k=3)
    monkeypatch.setenv("FERI_THREADS", "1")
    serial = write_artifacts(evaluate(cfg), tmp_path / "s")
    monkeypatch.setenv("FERI_THREADS", "2")
    parallel = write_artifacts(evaluate(cfg), tmp_path / "p")
    for key in serial:
        assert serial[key].read_bytes() == parallel[key].read_bytes()


def test_worker_count_honours_env(monkeypatch):
    monkeypatch.setenv("FERI_THREADS", "3")
    assert harness._worker_count(10) == 3
    assert harness._worker_count(2) == 2
    monkeypatch.setenv("FERI_THREADS", "many")
    with pytest.raises(ConfigError):
        harness._worker_count(4)


def _result_with(base_vals, feri_vals, tmp_path):
    cfg = small_config(tmp_path)
    metrics = [FoldMetrics(arm, f + 1, dp, eo, {0: 0.5, 1: 0.5}, {0: 0.5, 1: 0.5})
               for arm, vals in (("baseline", base_vals), ("feri", feri_vals)) for f, (dp, eo) in enumerate(vals)]
    return ExperimentResult(cfg, None, [], metrics)


def test_percent_reduction_column(tmp_path):
    res = _result_with([(0.0046, 0.0833)] * 5, [(0.0013, 0.0496)] * 5, tmp_path)
    table = rows(results_csv(res))
    mean = next(r for r in table if r["arm"] == "feri" and r["fold"] == "mean")
    assert mean["dp_reduction"] == "71.74%"
    assert mean["eo_reduction"] == "40.46%"
    assert all(r["dp_reduction"] == "71.74%" for r in table if r["arm"] == "feri" and r["fold"].isdigit())


def test_failure_row_instead_of_crash(tmp_path, monkeypatch):
    real = harness.train_arm

    def diverging(arm, *args):
        if arm == "feri":
            raise DivergenceError(4, [float("nan"), 0.3])
        return real(arm, *args)

    monkeypatch.setattr(harness, "train_arm", diverging)
    res = evaluate(small_config(tmp_path, epochs=2, k=3))
    table = rows(results_csv(res))
    feri_rows = [r for r in table if r["arm"] == "feri" and r["fold"].isdigit()]
    assert len(feri_rows) == 3
    assert all(r["status"].startswith("failed: non-finite task loss at epoch 4") for r in feri_rows)
    assert any(r["status"] == "ok" for r in table if r["arm"] == "baseline")


def test_metrics_use_test_indices_only(tmp_path):
    cfg = small_config(tmp_path, epochs=2)
    seeds = Seeds.expand(cfg.seed, cfg.k)
    ds = load_dataset(cfg, seeds)
    plan = kfold_split(ds, cfg.k, seeds.split)
    for f, split in enumerate(plan.folds):
        run = run_fold(cfg, ds, f + 1, split, "feri", seeds.init[f])
        assert np.array_equal(run.eval_index, split.test)
        assert run.scores.shape == split.test.shape
        assert not set(split.test.tolist()) & set(split.train.tolist())


def test_seed_expansion_is_stable():
    a, b = Seeds.expand(42, 5), Seeds.expand(42, 5)
    assert a == b and len(set(a.init)) == 5
    assert Seeds.expand(43, 5) != a


# -- trace -----------------------------------------------------------------------------

def test_trace_rows_and_round_trip(tmp_path):
    cfg = small_config(tmp_path, epochs=300, arms=("feri",), synth=SynthSpec(counts=(60, 20)))
    seeds = Seeds.expand(cfg.seed, cfg.k)
    ds = load_dataset(cfg, seeds)
    split = kfold_split(ds, cfg.k, seeds.split).folds[0]
    run = run_fold(cfg, ds, 1, split, "feri", seeds.init[0])
    trace = TrainingTrace.from_runs([run])
    assert len(trace.rows) == 600
    assert [r[5] for r in trace.rows if r[2] == 0] == [0.5, 0.5]
    for epoch in range(300):
        w = [r[5] for r in trace.rows if r[2] == epoch]
        assert abs(sum(w) - 1) <= 1e-12
    path = tmp_path / "trace.csv"
    export_trace(trace, path)
    assert path.read_text().splitlines()[0] == "arm,fold,epoch,task,loss,weight"
    back = read_trace(path)
    assert [r[:4] for r in back.rows] == [r[:4] for r in trace.rows]
    for got, want in zip(back.rows, trace.rows):
        assert got[4] == pytest.approx(want[4], rel=1e-8)
        assert got[5] == pytest.approx(want[5], rel=1e-8)
    # serialised with 9 significant digits, so a second write reproduces the file
    export_trace(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_baseline_trace_weights(small_result):
    trace = TrainingTrace.from_runs(small_result.runs)
    assert all(r[5] == 0.5 for r in trace.rows if r[0] == "baseline")
    keys = [r[:4] for r in trace.rows]
    assert keys == sorted(keys)


def test_empty_trace_and_bad_path(tmp_path):
    with pytest.raises(ValueError):
        export_trace(TrainingTrace([]), tmp_path / "t.csv")
    trace = TrainingTrace([("feri", 1, 0, 0, 0.5, 0.5)])
    with pytest.raises(OSError):
        export_trace(trace, tmp_path / "missing" / "t.csv")


# -- grid search -------------------------------------------------------------------

def test_default_grid_has_forty_points():
    assert len(DEFAULT_GAMMA_GRID) == 8 and len(DEFAULT_BETA_GRID) == 5
    assert DEFAULT_GAMMA_GRID[0] == pytest.approx(1e-9) and DEFAULT_GAMMA_GRID[-1] == pytest.approx(1e-2)
    assert {0.08, 0.10, 0.11} <= set(DEFAULT_BETA_GRID)
    points = [GridPoint(g, b, 0.1, 0.2, 0.7, 0.6) for g in DEFAULT_GAMMA_GRID for b in DEFAULT_BETA_GRID]
    table = rows(grid_csv(rank_grid(points)))
    assert len(table) == 40


def test_grid_tie_break():
    pts = [GridPoint(1e-3, 0.10, 0.1, 0.2, 0.7, 0.6), GridPoint(1e-5, 0.15, 0.1, 0.2, 0.7, 0.6),
           GridPoint(1e-5, 0.05, 0.1, 0.2, 0.7, 0.6), GridPoint(1e-9, 0.1, 0.1, 0.3, 0.9, 0.6),
           GridPoint(1e-9, 0.1, 0.1, 0.2, 0.8, 0.6), GridPoint(1e-9, 0.05, float("nan"), float("nan"),
                                                            float("nan"), float("nan"), "boom")]
    ranked = rank_grid(pts)
    assert [(p.gamma, p.beta) for p in ranked] == [(1e-9, 0.1), (1e-5, 0.05), (1e-5, 0.15), (1e-3, 0.10),
                                                   (1e-9, 0.1), (1e-9, 0.05)]
    assert ranked[0].auroc == 0.8 and ranked[-1].failure == "boom"
    assert [p.rank for p in ranked] == [1, 2, 3, 4, 5, 6]


def test_one_point_grid_matches_single_run(tmp_path):
    cfg = small_config(tmp_path, epochs=3, k=3)
    (point,) = grid_search(cfg, [1e-6], [5.0])
    single = evaluate(replace(cfg, arms=("feri",)), eval_split="validation")
    assert point.rank == 1
    assert point.equalized_odds == pytest.approx(single.mean_metric("feri", "equalized_odds"), abs=1e-15)
    assert point.demographic_parity == pytest.approx(single.mean_metric("feri", "demographic_parity"), abs=1e-15)
    with pytest.raises(ConfigError):
        grid_search(cfg, [], [0.1])


# -- config files -------------------------------------------------------------------

def test_parse_kv():
    kv = parse_kv("# comment\na = 1\n\nb= x , y  # trailing\n")
    assert kv == {"a": "1", "b": "x , y"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_kv("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_kv("nonsense\n")


def test_load_config(tmp_path):
    (tmp_path / "cfg").mkdir()
    path = tmp_path / "cfg" / "exp.cfg"
    path.write_text("opt.alpha = 0.2\nopt.beta = 3\ntrain.epochs = 7\ncv.k = 4\nseed = 9\narms = feri\n"
                    "model.hidden = 8,4\nsynth.counts = 50,20\nout_dir = results\n")
    cfg = load_config(path)
    assert cfg.hyper.alpha == 0.2 and cfg.hyper.beta == 3.0
    assert (cfg.epochs, cfg.k, cfg.seed, cfg.arms) == (7, 4, 9, ("feri",))
    assert cfg.model.hidden == (8, 4) and cfg.synth.counts == (50, 20)
    assert cfg.out_dir == str(tmp_path / "cfg" / "results")


@pytest.mark.parametrize("text, message", [
    ("bogus = 1\n", "unknown config key"),
    ("train.epochs = 0\n", "epochs"),
    ("arms = \n", "at least one arm"),
    ("arms = feri,magic\n", "unknown arm"),
    ("data.source = csv\ndata.path = nowhere.csv\n", "does not exist"),
    ("opt.alpha = fast\n", "fast"),
    ("synth.colour = red\n", "unknown synth key"),
])
def test_bad_configs(tmp_path, text, message):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=message):
        load_config(path)


def test_csv_source(tmp_path):
    from feri.data import synth_generate, write_csv
    write_csv(synth_generate(SynthSpec(counts=(60, 30))), tmp_path / "d.csv")
    path = tmp_path / "exp.cfg"
    path.write_text("data.source = csv\ndata.path = d.csv\nattribute = age_group\ndata.groups = Adult,Pediatric\n"
                    "data.categorical = cat0:3,cat1:4,cat2:5,cat3:6,cat4:4,cat5:3\n"
                    "data.continuous = num0,num1,num2,num3,num4,num5\ntrain.epochs = 2\ncv.k = 3\n")
    res = evaluate(load_config(path))
    assert len(res.dataset) == 90 and all(m.failure is None for m in res.metrics)
