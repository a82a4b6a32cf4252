import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexcodesign.config import RunConfig, apply_overrides, load_config
from flexcodesign.errors import ConfigError, IOFailure
from flexcodesign.hwcost import CostReport
from flexcodesign.pipeline import (CSV_COLUMNS, ParetoPoint, export, load_points, pareto_filter, report,
                                   run_pipeline, select_best, tune_hyperparams)


def fast_cfg(out, **kw):
    d = RunConfig().to_dict()
    d["dataset"]["synthetic"].update(num_subjects=5, duration_s=60)
    d["train"].update(epochs=12, retrain_epochs=3, patience=5, hidden=16, warmup_epochs=2)
    d.update(k=5, folds=[0], output_dir=str(out), tune_epochs=6)
    d.update(kw)
    return RunConfig.from_dict(d)


def point(acc, area, fold=0, tau=0.1):
    cost = CostReport({"analog_features": 0.0, "adc": 0.0, "classifier": area, "total": area},
                      {"analog_features": 0.0, "adc": 0.0, "classifier": 0.0, "active": 0.0},
                      {"adc_total": 0.0, "mlp": 0.3, "total": 0.3}, 0.0)
    return ParetoPoint(fold, tau, 0.01, 0.1, [["ch0", "Max"]], 0.5, acc, acc, cost, True, 19.7, acc_float=acc)


def test_pareto_examples():
    a = point(0.9, 2)
    assert pareto_filter([a]) == [a]
    b = point(0.8, 3)
    assert pareto_filter([a, b]) == [a]
    c = point(0.8, 1)
    assert pareto_filter([a, c]) == [a, c]
    d = point(0.9, 2)
    assert pareto_filter([a, d]) == [a, d]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 5)), max_size=15))
def test_pareto_idempotent_and_nondominated(vals):
    pts = [point(a, c) for a, c in vals]
    front = pareto_filter(pts)
    assert pareto_filter(front) == front
    for p in front:
        assert not any(q.acc_analog >= p.acc_analog and q.area <= p.area
                       and (q.acc_analog > p.acc_analog or q.area < p.area) for q in pts)


def test_export_shapes(tmp_path):
    pts = [point(0.9, 2), point(0.8, 1), point(0.7, 3)]
    export(pts, tmp_path / "a")
    lines = (tmp_path / "a" / "pareto.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0] == ",".join(CSV_COLUMNS)
    back = load_points(tmp_path / "a" / "pareto.json")
    assert [p.to_dict() for p in back] == [p.to_dict() for p in pts]
    export([], tmp_path / "b")
    assert (tmp_path / "b" / "pareto.csv").read_text().splitlines() == [",".join(CSV_COLUMNS)]
    assert json.loads((tmp_path / "b" / "pareto.json").read_text()) == []


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IOFailure):
        export([point(0.9, 1)], blocker / "sub")


def test_report_has_one_row_per_tau():
    text = report([point(0.9, 2, tau=0.1), point(0.8, 1, fold=1, tau=0.1), point(0.7, 3, tau=0.5)])
    assert len(text.splitlines()) == 3


def test_select_best_prefers_lower_cost():
    recs = [{"trial": 0, "val_accuracy": 0.9, "expected_cost": 0.5, "score": 0.9 - 0.25},
            {"trial": 1, "val_accuracy": 0.9, "expected_cost": 0.2, "score": 0.9 - 0.1}]
    assert select_best(recs)["trial"] == 1


def test_config_validation_and_overrides(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(taus=(0.2, 0.1))
    with pytest.raises(ConfigError):
        RunConfig(taus=(0.1, 1.5))
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": 1})
    assert apply_overrides({"a": {"b": 1}}, ["a.b=2.5", "c=\"x\""]) == {"a": {"b": 2.5}, "c": "x"}
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epochs": 7}, "lam": 0.02}))
    cfg = load_config(p, ["seed=4"])
    assert (cfg.train.epochs, cfg.lam, cfg.seed, cfg.train.lr) == (7, 0.02, 4, 1e-3)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def fold_points(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_pipeline(fast_cfg(out, lam=0.1)), out


def test_five_points_per_fold(fold_points):
    pts, out = fold_points
    assert [p.tau for p in pts] == [0.01, 0.05, 0.1, 0.2, 0.5]
    assert all((out / p.checkpoint).exists() for p in pts)
    assert any(p.on_front for p in pts)


def test_selected_count_non_increasing(fold_points):
    counts = [p.selected_count for p in fold_points[0]]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_points_are_consistent(fold_points):
    for p in fold_points[0]:
        assert 0 <= p.acc_ideal <= 1 and 0 <= p.acc_analog <= 1
        c = p.cost.area_mm2
        assert c["total"] == c["analog_features"] + c["adc"] + c["classifier"]
        assert p.realtime_ok == (p.cost.latency_ms["total"] < 20)


def test_workers_do_not_change_results(tmp_path):
    a = run_pipeline(fast_cfg(tmp_path / "a", folds=[0, 1], workers=1), write_checkpoints=False)
    b = run_pipeline(fast_cfg(tmp_path / "b", folds=[0, 1], workers=2), write_checkpoints=False)
    assert [p.to_dict() for p in a] == [p.to_dict() for p in b]


def test_tune(tmp_path):
    cfg = fast_cfg(tmp_path)
    best, recs = tune_hyperparams(cfg, trials=1)
    assert best == recs[0]
    lo, hi = cfg.lambda_range
    assert lo <= best["lambda"] <= hi
    again, _ = tune_hyperparams(cfg, trials=1)
    assert again == best
    with pytest.raises(ConfigError):
        tune_hyperparams(cfg, trials=0)


def test_ideal_analog_equals_ideal_path(tmp_path):
    from flexcodesign.analog import AnalogConfig
    cfg = fast_cfg(tmp_path, analog=AnalogConfig.ideal().to_dict(), taus=[0.1])
    pts = run_pipeline(cfg, write_checkpoints=False)
    assert all(p.acc_analog == p.acc_ideal for p in pts)
