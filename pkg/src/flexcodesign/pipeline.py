"""End-to-end co-design flow: gated training, tau sweep, pruning, quantization, costing.

Each fold is an independent job seeded from ``(seed, fold)``; results do not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adc import AdcConfig
from .config import RunConfig
from .errors import ConfigError, FlexError, IOFailure
from .gating import GateLayer, cost_loss, deterministic_gates, prune_gates
from .hwcost import CostReport, feature_cost_vector, load_lut, realtime_check, system_cost
from .mlp import (TrainConfig, evaluate, forward, ideal_inputs, init_model, predict, quantize_weights,
                  save_checkpoint, train)
from .prune import ltp_run
from .signal import (SyntheticSpec, apply_normalizer, candidate_entries, fit_normalizer, generate_synthetic,
                     kfold_split, load_csv, make_windows, validation_split)

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "fold", "tau", "lambda", "gamma_end", "selected_count", "features", "sparsity",
    "acc_ideal", "acc_analog", "acc_float",
    "area_mm2_total", "area_mm2_analog_features", "area_mm2_adc", "area_mm2_classifier",
    "power_mw", "energy_uj", "latency_ms", "realtime_ok", "on_front",
)


@dataclass
class ParetoPoint:
    fold: int
    tau: float
    lam: float
    gamma_end: float
    selected: list  # [[channel, kind], ...]
    sparsity: float
    acc_ideal: float
    acc_analog: float
    cost: CostReport
    realtime_ok: bool
    realtime_margin_ms: float
    acc_float: float = float("nan")
    checkpoint: Optional[str] = None
    ltp_rounds: list = field(default_factory=list)
    on_front: bool = False

    @property
    def area(self):
        return self.cost.area_mm2["total"]

    @property
    def selected_count(self):
        return len(self.selected)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "fold", "tau", "lam", "gamma_end", "sparsity", "acc_ideal", "acc_analog", "acc_float",
            "realtime_ok", "realtime_margin_ms", "checkpoint", "on_front")}
        d["selected"] = [list(e) for e in self.selected]
        d["cost"] = self.cost.to_dict()
        d["ltp_rounds"] = [dict(r) for r in self.ltp_rounds]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cost"] = CostReport.from_dict(d["cost"])
        d["selected"] = [list(e) for e in d["selected"]]
        return cls(**d)


# --------------------------------------------------------------------------
# data

def load_dataset(cfg: RunConfig):
    src = cfg.dataset
    if "csv" in src:
        return load_csv(src["csv"], src.get("schema"))
    spec = dict(src["synthetic"])
    seed = spec.pop("seed", cfg.seed)
    return generate_synthetic(SyntheticSpec(**spec), seed)


@dataclass
class FoldData:
    entries: list
    X_fit: np.ndarray
    y_fit: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    test: object  # normalized WindowSet
    normalizer: object


def prepare_fold(windows, plan, fold: int, cfg: RunConfig, seed: int) -> FoldData:
    train_ids = plan.train[fold]
    fit_ids, val_ids = validation_split(train_ids, cfg.train.val_fraction, seed)
    norm = fit_normalizer(windows.for_subjects(train_ids))
    fit = apply_normalizer(norm, windows.for_subjects(fit_ids))
    val = apply_normalizer(norm, windows.for_subjects(val_ids))
    test = apply_normalizer(norm, windows.for_subjects(plan.test[fold]))
    entries = candidate_entries(windows.channels)
    q = lambda ws: ideal_inputs(ws, entries, cfg.analog, cfg.adc)
    return FoldData(entries, q(fit), fit.labels, q(val), val.labels, test, norm)


def _fold_seed(seed, fold, salt=0):
    return int(np.random.SeedSequence([seed, fold, salt]).generate_state(1)[0])


def train_gated(data: FoldData, cfg: RunConfig, lam, gamma_end, seed, num_classes, epochs=None):
    costs = gate_costs(data.entries, load_lut(cfg.lut))
    tcfg = replace(cfg.train, seed=seed)
    if epochs is not None:
        tcfg = replace(tcfg, epochs=epochs, patience=min(tcfg.patience, epochs))
    model = init_model(len(data.entries), tcfg.hidden, num_classes, seed)
    layer = GateLayer.create(costs, lam=lam, warmup_epochs=tcfg.warmup_epochs,
                             gamma=cfg.gamma_start)
    schedule = cfg.gamma_schedule(gamma_end, tcfg.epochs)
    train(model, layer, data.X_fit, data.y_fit, data.X_val, data.y_val, tcfg, schedule)
    return model, layer, tcfg


def gate_costs(entries, lut):
    """LUT areas rescaled to mean 1 so lambda has the same meaning for any LUT."""
    c = feature_cost_vector(entries, lut)
    m = float(c.mean())
    return c / m if m > 0 else c


def _accuracy(model, X, y, z):
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(model, X, z) == y))


def run_fold(windows, plan, fold: int, cfg: RunConfig, num_classes: int, lam=None, gamma_end=None,
             checkpoint_dir=None):
    """All tau candidates of one fold, unfiltered."""
    lam = cfg.lam if lam is None else lam
    gamma_end = cfg.gamma_end if gamma_end is None else gamma_end
    seed = _fold_seed(cfg.seed, fold)
    lut = load_lut(cfg.lut)
    data = prepare_fold(windows, plan, fold, cfg, seed)
    model, layer, tcfg = train_gated(data, cfg, lam, gamma_end, seed, num_classes)
    X_test = ideal_inputs(data.test, data.entries, cfg.analog, cfg.adc)
    points = []
    for tau in cfg.taus:
        try:
            pts = _tau_point(model, layer, data, X_test, tau, fold, lam, gamma_end, cfg, tcfg, lut,
                             checkpoint_dir)
        except FlexError as e:
            raise type(e)(f"fold {fold}, tau {tau}: {e}") from e
        points.append(pts)
    return points


def _tau_point(model, layer, data, X_test, tau, fold, lam, gamma_end, cfg, tcfg, lut, checkpoint_dir):
    gl = layer.copy()
    zhat = prune_gates(gl, tau)
    m = model.copy()
    removed_rows = np.repeat((zhat == 0)[:, None], m.W1.shape[1], axis=1)
    frozen_out = {"W1": removed_rows, "W2": np.zeros_like(m.W2, dtype=bool)}
    m, rounds = ltp_run(m, gl, data.X_fit, data.y_fit, data.X_val, data.y_val,
                        cfg.sparsity_schedule(), tcfg, frozen_out)
    acc_float = _accuracy(m, X_test, data.test.labels, zhat)
    qm = quantize_weights(m, cfg.weight_bits, cfg.input_bits)
    acc_ideal, _ = evaluate(qm, gl, data.test, "ideal", cfg.analog, cfg.adc, data.entries)
    acc_analog, _ = evaluate(qm, gl, data.test, "analog", cfg.analog, cfg.adc, data.entries)
    selected = [list(e) for e, on in zip(data.entries, zhat) if on]
    report = system_cost(selected, qm, cfg.adc, lut, cfg.window_s, active_inputs=zhat > 0)
    ok, margin = realtime_check(report, lut.budget_ms, cfg.window_s)
    ckpt = None
    if checkpoint_dir is not None:
        name = f"fold{fold}_tau{tau:g}.npz"
        save_checkpoint(Path(checkpoint_dir) / name, m, gl, qm,
                        meta={"fold": fold, "tau": tau, "entries": [list(e) for e in data.entries]})
        ckpt = f"checkpoints/{name}"
    return ParetoPoint(fold, tau, lam, gamma_end, selected, m.sparsity(), acc_ideal, acc_analog,
                       report, ok, margin, acc_float, ckpt, rounds)


def _fold_job(args):
    return run_fold(*args)


def run_pipeline(cfg: RunConfig, lam=None, gamma_end=None, write_checkpoints=True):
    """Candidate points for every configured fold, with ``on_front`` flags set per fold."""
    dataset = load_dataset(cfg)
    windows = make_windows(dataset, cfg.window_s)
    plan = kfold_split(dataset, cfg.k, cfg.seed)
    folds = list(range(cfg.k)) if cfg.folds is None else list(cfg.folds)
    ckdir = None
    if write_checkpoints:
        ckdir = Path(cfg.output_dir) / "checkpoints"
        try:
            ckdir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IOFailure(f"cannot create {ckdir}: {e}") from None
    jobs = [(windows, plan, f, cfg, dataset.num_classes, lam, gamma_end, ckdir) for f in folds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as ex:
            results = list(ex.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]
    points = []
    for fold_points in results:
        front = {id(p) for p in pareto_filter(fold_points)}
        for p in fold_points:
            p.on_front = id(p) in front
        points.extend(fold_points)
    return points


def pareto_filter(points, accuracy=lambda p: p.acc_analog, area=lambda p: p.area):
    """Points not dominated in (higher accuracy, lower area); exact ties are all kept."""
    keep = []
    for p in points:
        ap, cp = accuracy(p), area(p)
        dominated = any(
            accuracy(q) >= ap and area(q) <= cp and (accuracy(q) > ap or area(q) < cp)
            for q in points if q is not p
        )
        if not dominated:
            keep.append(p)
    return keep


# --------------------------------------------------------------------------
# hyperparameter search

def _log_uniform(rng, lo, hi):
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def tune_hyperparams(cfg: RunConfig, trials: int = None, seed: int = None):
    """Seeded random search over (lambda, gamma_end) on fold 0.

    score = validation accuracy - mu * expected_cost / total_candidate_cost.
    Returns ``(best, log)`` where ``best`` is the winning trial record.
    """
    trials = cfg.tune_trials if trials is None else trials
    seed = cfg.seed if seed is None else seed
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    dataset = load_dataset(cfg)
    windows = make_windows(dataset, cfg.window_s)
    plan = kfold_split(dataset, cfg.k, cfg.seed)
    fold = 0 if cfg.folds is None else cfg.folds[0]
    fseed = _fold_seed(cfg.seed, fold)
    data = prepare_fold(windows, plan, fold, cfg, fseed)
    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials):
        lam = _log_uniform(rng, *cfg.lambda_range)
        gend = min(_log_uniform(rng, *cfg.gamma_end_range), cfg.gamma_start)
        model, layer, _ = train_gated(data, cfg, lam, gend, fseed, dataset.num_classes, epochs=cfg.tune_epochs)
        z = deterministic_gates(layer)
        acc = _accuracy(model, data.X_val, data.y_val, z)
        norm_cost = cost_loss(layer) / max(float(layer.costs.sum()), 1e-300)
        records.append({"trial": t, "lambda": lam, "gamma_end": gend, "val_accuracy": acc,
                        "expected_cost": norm_cost, "score": acc - cfg.tune_cost_weight * norm_cost})
    best = select_best(records)
    return best, records


def select_best(records):
    """Highest score; earlier trial wins exact ties."""
    best = records[0]
    for r in records[1:]:
        if r["score"] > best["score"]:
            best = r
    return best


def run_full(cfg: RunConfig):
    """Tune (when ``tune_trials`` > 0), sweep every fold, export, and return the points."""
    lam, gend, tune_log = cfg.lam, cfg.gamma_end, None
    if cfg.tune_trials > 0:
        best, tune_log = tune_hyperparams(cfg)
        lam, gend = best["lambda"], best["gamma_end"]
    points = run_pipeline(cfg, lam, gend)
    export(points, cfg.output_dir, tune_log=tune_log, config=cfg.to_dict())
    return points


# --------------------------------------------------------------------------
# export

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_rows(points):
    for p in points:
        a = p.cost.area_mm2
        yield [p.fold, p.tau, p.lam, p.gamma_end, p.selected_count,
               ";".join(f"{c}:{k}" for c, k in p.selected), p.sparsity,
               p.acc_ideal, p.acc_analog, p.acc_float,
               a["total"], a["analog_features"], a["adc"], a["classifier"],
               p.cost.power_mw["active"], p.cost.energy_uj, p.cost.latency_ms["total"],
               p.realtime_ok, p.on_front]


def export(points, out_dir, tune_log=None, config=None):
    """Write pareto.csv and pareto.json (plus tune.json / config.json when given)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in csv_rows(points):
            w.writerow([_fmt(v) for v in row])
        (out / "pareto.csv").write_text(buf.getvalue(), encoding="utf-8")
        (out / "pareto.json").write_text(json.dumps([p.to_dict() for p in points], indent=1), encoding="utf-8")
        if tune_log is not None:
            (out / "tune.json").write_text(json.dumps(tune_log, indent=1), encoding="utf-8")
        if config is not None:
            (out / "config.json").write_text(json.dumps(config, indent=1), encoding="utf-8")
    except OSError as e:
        raise IOFailure(f"cannot write results to {out}: {e}") from None
    return out / "pareto.csv", out / "pareto.json"


def load_points(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return [ParetoPoint.from_dict(d) for d in json.load(fh)]
    except OSError as e:
        raise IOFailure(f"cannot read {path}: {e}") from None


def _mean_std(vals):
    vals = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return float("nan"), float("nan")
    return float(np.mean(vals)), float(np.std(vals))


def report(points) -> str:
    """Fold-averaged table per tau: accuracy, features, area, power, energy, latency."""
    header = ("tau", "folds", "#feat", "acc_ideal %", "acc_analog %", "area mm2", "power mW",
              "energy uJ", "latency ms", "realtime")
    lines = ["  ".join(f"{h:>14}" for h in header)]
    for tau in sorted({p.tau for p in points}):
        group = [p for p in points if p.tau == tau]
        cells = [f"{tau:g}", str(len(group))]
        for vals, scale in (
            ([p.selected_count for p in group], 1),
            ([p.acc_ideal for p in group], 100),
            ([p.acc_analog for p in group], 100),
            ([p.area for p in group], 1),
            ([p.cost.power_mw["active"] for p in group], 1),
            ([p.cost.energy_uj for p in group], 1),
            ([p.cost.latency_ms["total"] for p in group], 1),
        ):
            m, s = _mean_std([float(v) * scale for v in vals])
            cells.append(f"{m:.3g}±{s:.2g}")
        cells.append(f"{sum(p.realtime_ok for p in group)}/{len(group)}")
        lines.append("  ".join(f"{c:>14}" for c in cells))
    return "\n".join(lines)
