"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

import flexcodesign.prune as prune_mod
from flexcodesign.adc import AdcConfig, dac_level, sar_convert
from flexcodesign.analog import AnalogConfig, extractor_bank, nmse, to_voltage
from flexcodesign.config import RunConfig
from flexcodesign.gating import GateLayer, sample_gates, sigmoid
from flexcodesign.hwcost import default_lut, realtime_check, system_cost
from flexcodesign.mlp import (TrainConfig, evaluate, ideal_inputs, init_model, predict, quantize_weights,
                              train)
from flexcodesign.pipeline import (_fold_seed, load_dataset, pareto_filter, prepare_fold, run_full,
                                   run_pipeline, tune_hyperparams)
from flexcodesign.prune import SparsitySchedule, ltp_run
from flexcodesign.signal import (SyntheticSpec, WindowSet, apply_normalizer, candidate_entries, feature_table,
                                 fit_normalizer, generate_synthetic, kfold_split, make_windows)

from oracles import max_rel_fd_error, small_problem

INFORMATIVE = {("ch0", "Max"), ("ch1", "Min")}


def verdict(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} ({detail})")
    assert ok, detail


def brute_code(v, cfg):
    code = 0
    for c in range(cfg.max_code + 1):
        level = cfg.v_dac_lo + c * (cfg.v_dac_hi - cfg.v_dac_lo) / cfg.max_code
        if c == cfg.max_code:
            level = cfg.v_dac_hi
        if level <= v:
            code = c
    return code


@pytest.fixture(scope="module")
def fold0():
    """Dense float model trained on fold 0 of the default synthetic data, gates fixed open."""
    cfg = RunConfig(folds=[0])
    ds = load_dataset(cfg)
    windows = make_windows(ds, cfg.window_s)
    plan = kfold_split(ds, cfg.k, cfg.seed)
    seed = _fold_seed(cfg.seed, 0)
    data = prepare_fold(windows, plan, 0, cfg, seed)
    d = len(data.entries)
    tcfg = replace(cfg.train, seed=seed)
    layer = GateLayer.create(np.ones(d), frozen_mask=np.ones(d))
    model = init_model(d, tcfg.hidden, ds.num_classes, seed)
    train(model, layer, data.X_fit, data.y_fit, data.X_val, data.y_val, tcfg)
    X_test = ideal_inputs(data.test, data.entries)
    return cfg, tcfg, data, model, layer, X_test


def test_c01_gradient_oracle(capsys):
    t0 = time.perf_counter()
    model, layer, X, y, u = small_problem(d=6, H=8, C=3, lam=0.3, gamma=0.7)
    err = max_rel_fd_error(model, layer, X, y, u)
    dt = time.perf_counter() - t0
    verdict(capsys, 1, "full-model gradients vs central differences", err <= 1e-4 and dt < 10,
            f"max rel err {err:.2e} <= 1e-4, {dt:.2f}s < 10s")


def test_c02_concrete_statistics(capsys):
    t0 = time.perf_counter()
    n = 100_000
    logits = np.array([-2.0, 0.0, 2.0])
    layer = GateLayer(np.repeat(logits, n), np.ones(3 * n))
    rng = np.random.default_rng(0)
    worst, monotone = 0.0, True
    mids = {}
    for gamma in (2.0, 0.5, 0.1):
        layer.gamma = gamma
        s = sample_gates(layer, rng).s.reshape(3, n)
        for i, la in enumerate(logits):
            p = float(sigmoid(la))
            z = abs(np.mean(s[i] > 0.5) - p) / math.sqrt(p * (1 - p) / n)
            worst = max(worst, z)
        mids[gamma] = np.mean((s > 0.05) & (s < 0.95), axis=1)
    for a, b in ((2.0, 0.5), (0.5, 0.1)):
        monotone &= bool(np.all(mids[b] <= mids[a]))
    dt = time.perf_counter() - t0
    verdict(capsys, 2, "Concrete median and sharpening", worst <= 3 and monotone and dt < 5,
            f"worst deviation {worst:.2f} sigma <= 3, mid-mass non-increasing={monotone}, {dt:.2f}s < 5s")


def test_c03_sar_oracle(capsys):
    t0 = time.perf_counter()
    cfg = AdcConfig()
    v = np.random.default_rng(0).uniform(cfg.v_dac_lo - 0.1, cfg.v_dac_hi + 0.1, 10_000)
    compared = []

    def comparator(x, ref):
        compared.append(np.size(x))
        return x >= ref

    codes = sar_convert(v, cfg, comparator=comparator)
    mismatches = int(sum(int(c) != brute_code(x, cfg) for c, x in zip(codes, v)))
    ends = (sar_convert(0.98, cfg), sar_convert(1.95, cfg))
    per_conv = sum(compared) / v.size
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and ends == (0, 15) and per_conv == 4 and dac_level(0, cfg) == 0.98 and dt < 1
    verdict(capsys, 3, "SAR ADC vs brute force", ok,
            f"{mismatches} mismatches, endpoints {ends}, {per_conv:g} comparisons/conversion, {dt:.2f}s < 1s")


def test_c04_analog_ideal_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    n, spw = 1000, 16
    ws = WindowSet(("ch0", "ch1"), 1.0 / spw, rng.uniform(0, 1, (n, 2, spw)), np.zeros(n), ["s"] * n)
    cfg = AnalogConfig.ideal(rc_product=1.0)
    keys = candidate_entries(ws.channels)
    _, volts, _ = extractor_bank(ws, keys, cfg)
    ref = feature_table(ws, keys)
    err = 0.0
    for j, (_, kind) in enumerate(keys):
        if kind == "Sum":
            hw = volts[:, j] * cfg.residual(spw)
            sw = to_voltage(ref[:, j] / spw, cfg) * spw
        else:
            hw, sw = volts[:, j], to_voltage(ref[:, j], cfg)
        err = max(err, float(np.max(np.abs(hw - sw))))
    peaks = [j for j, (_, k) in enumerate(keys) if k in ("Max", "Min")]
    sw_peaks = to_voltage(ref[:, peaks], cfg)
    errs = []
    for vth in (0.0, 0.05, 0.1, 0.2):
        _, v, _ = extractor_bank(ws, [keys[j] for j in peaks], cfg.with_(v_th=vth))
        errs.append(nmse(v, sw_peaks))
    rising = errs[1] > 0 and all(b > a for a, b in zip(errs[1:], errs[2:]))
    dt = time.perf_counter() - t0
    verdict(capsys, 4, "ideal analog extractors equal software features",
            err <= 1e-9 and errs[0] == 0 and rising and dt < 5,
            f"max abs err {err:.1e} <= 1e-9, NMSE ideal {errs[0]:g}, "
            f"v_th 0.05/0.1/0.2 -> {errs[1]:.2e}/{errs[2]:.2e}/{errs[3]:.2e}, {dt:.2f}s < 5s")


def test_c05_path_equivalence(capsys, fold0):
    t0 = time.perf_counter()
    cfg, tcfg, data, model, layer, _ = fold0
    ds = generate_synthetic(SyntheticSpec(num_subjects=5, duration_s=100), seed=123)
    ws = make_windows(ds, 1.0)
    ws = apply_normalizer(fit_normalizer(ws), ws).select(np.arange(500))
    qm = quantize_weights(model)
    gl = layer.copy()
    gl.frozen_mask = np.ones(gl.d)
    gl.frozen_mask[::3] = 0
    _, p_ideal = evaluate(qm, gl, ws, "ideal", AnalogConfig.ideal(), AdcConfig(), data.entries)
    _, p_analog = evaluate(qm, gl, ws, "analog", AnalogConfig.ideal(), AdcConfig(), data.entries)
    dis = int(np.sum(p_ideal != p_analog))
    dt = time.perf_counter() - t0
    verdict(capsys, 5, "analog+ADC path equals quantized ideal path", len(ws) == 500 and dis == 0 and dt < 30,
            f"{dis} disagreements on {len(ws)} windows, {dt:.2f}s < 30s")


def test_c06_feature_selection_recovery(capsys, tmp_path):
    t0 = time.perf_counter()
    passed, notes = 0, []
    for seed in range(5):
        cfg = RunConfig(seed=seed, folds=[0], tune_trials=8, tune_epochs=20, output_dir=str(tmp_path))
        best, _ = tune_hyperparams(cfg)
        pts = run_pipeline(cfg, best["lambda"], best["gamma_end"], write_checkpoints=False)
        base = run_pipeline(replace(cfg, taus=(0.0,)), 0.0, cfg.gamma_end, write_checkpoints=False)[0]
        hits = [p for p in pareto_filter(pts)
                if p.selected_count <= 4 and p.acc_analog >= 0.95 * base.acc_analog
                and INFORMATIVE <= {tuple(e) for e in p.selected}]
        passed += bool(hits)
        notes.append(f"seed {seed}: {'ok' if hits else 'miss'}")
    dt = time.perf_counter() - t0
    verdict(capsys, 6, "informative features recovered with tuned lambda", passed >= 4 and dt < 180,
            f"{passed}/5 seeds pass ({', '.join(notes)}), {dt:.1f}s < 180s")


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    outs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(name)
        cfg = RunConfig(tune_trials=2, tune_epochs=10, output_dir=str(out))
        outs.append((run_full(cfg), out))
    return outs


def test_c07_tau_monotonicity(capsys, full_runs):
    points, _ = full_runs[0]
    folds = sorted({p.fold for p in points})
    ok = True
    detail = []
    for f in folds:
        pts = sorted((p for p in points if p.fold == f), key=lambda p: p.tau)
        counts = [p.selected_count for p in pts]
        ok &= [p.tau for p in pts] == [0.01, 0.05, 0.1, 0.2, 0.5]
        ok &= all(b <= a for a, b in zip(counts, counts[1:]))
        detail.append("-".join(map(str, counts)))
    verdict(capsys, 7, "selected count non-increasing in tau", ok and len(folds) == 5,
            f"per-fold counts {', '.join(detail)}")


def test_c08_lottery_ticket(capsys, fold0, monkeypatch):
    t0 = time.perf_counter()
    cfg, tcfg, data, model, layer, X_test = fold0
    dense_acc = float(np.mean(predict(model, X_test, layer.frozen_mask) == data.test.labels))
    m = model.copy()
    starts, steps = [], {"n": 0, "leaks": 0}
    real_train = prune_mod.train

    def checked_train(mm, *args, **kw):
        starts.append(all(np.array_equal(getattr(mm, k)[mm.mask[k] > 0], mm.init_snapshot[k][mm.mask[k] > 0])
                          for k in ("W1", "W2"))
                      and all(np.array_equal(getattr(mm, k), mm.init_snapshot[k]) for k in ("b1", "b2")))
        return real_train(mm, *args, **kw)

    def on_step(mm):
        steps["n"] += 1
        steps["leaks"] += int(sum(np.count_nonzero(getattr(mm, k)[mm.mask[k] == 0]) for k in ("W1", "W2")))

    monkeypatch.setattr(prune_mod, "train", checked_train)
    schedule = SparsitySchedule.geometric(0.5, 3)
    m, rounds = ltp_run(m, layer, data.X_fit, data.y_fit, data.X_val, data.y_val, schedule, tcfg,
                        on_step=on_step)
    n = m.num_weights
    pruned = int(sum(np.sum(m.mask[k] == 0) for k in ("W1", "W2")))
    off_by = abs(pruned - 0.5 * n)
    sparse_acc = float(np.mean(predict(m, X_test, layer.frozen_mask) == data.test.labels))
    gap = abs(sparse_acc - dense_acc)
    dt = time.perf_counter() - t0
    ok = (off_by <= 1 and len(starts) == 3 and all(starts) and all(r["rewind_exact"] for r in rounds)
          and steps["n"] > 0 and steps["leaks"] == 0 and gap <= 0.03 and dt < 120)
    verdict(capsys, 8, "lottery-ticket pruning", ok,
            f"pruned {pruned}/{n} (off by {off_by:g} <= 1), exact rewinds {sum(starts)}/3, "
            f"{steps['leaks']} nonzero masked weights over {steps['n']} steps, "
            f"acc dense {dense_acc:.3f} vs 50% sparse {sparse_acc:.3f} (gap {gap:.3f} <= 0.03), {dt:.1f}s < 120s")


def test_c09_quantization(capsys, fold0):
    cfg, tcfg, data, model, layer, X_test = fold0
    qm = quantize_weights(model, 8)
    bound_ok = all(np.all(np.abs(getattr(qm, k) - getattr(model, k)) <= qm.scale[k] / 2) for k in ("W1", "W2"))
    float_acc = float(np.mean(predict(model, X_test, layer.frozen_mask) == data.test.labels))
    q_acc, _ = evaluate(qm, layer, data.test, "ideal", cfg.analog, cfg.adc, data.entries)
    gap = abs(q_acc - float_acc)
    verdict(capsys, 9, "8-bit weight quantization", bound_ok and gap <= 0.02,
            f"error bound held={bound_ok}, acc float {float_acc:.3f} vs quantized {q_acc:.3f} "
            f"(gap {gap:.3f} <= 0.02)")


def test_c10_timing_energy(capsys):
    lut = default_lut()
    sel = [("ch0", "Min"), ("ch0", "Max"), ("ch1", "Min"), ("ch1", "Max")]
    rep = system_cost(sel, None, AdcConfig(), lut)
    latency = rep.latency_ms["adc_total"] + lut.mlp.latency_cycles / lut.clock_hz * 1e3
    ok_rt, margin = realtime_check(rep, 20.0, 1.0)
    rep_full = system_cost(sel, quantize_weights(init_model(4, 3, 2)), AdcConfig(), lut)
    ok_full, _ = realtime_check(rep_full, 20.0, 1.0)
    energy = rep.power_mw["adc"] * rep.active_ms["adc"]
    hand_latency = 4 * 0.5 + 3 / 10_000 * 1e3
    hand_energy = 0.0814 * 2.0
    ok = (rep_full.latency_ms["total"] == hand_latency == latency and ok_full
          and abs(energy - hand_energy) <= 1e-6 and round(energy, 3) == 0.163 and ok_rt)
    verdict(capsys, 10, "latency and ADC energy arithmetic", ok,
            f"latency {rep_full.latency_ms['total']:g} ms (hand {hand_latency:g}), realtime={ok_full}, "
            f"ADC energy {energy:.6g} uJ (hand {hand_energy:.6g}, 3 d.p. {round(energy, 3)})")


def test_c11_determinism(capsys, full_runs):
    (_, a), (_, b) = full_runs
    ca, cb = (a / "pareto.csv").read_bytes(), (b / "pareto.csv").read_bytes()
    verdict(capsys, 11, "same seed gives byte-identical pareto.csv", ca == cb and len(ca) > 0,
            f"{len(ca)} vs {len(cb)} bytes, identical={ca == cb}")
