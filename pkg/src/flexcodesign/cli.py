"""Command-line entry point: ``flexcodesign <subcommand> [options]``.

Exit codes: 0 success, 2 config/usage, 3 data, 4 I/O, 5 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .adc import write_trace
from .analog import adc_input_voltages, extractor_bank, nmse, software_values
from .config import load_config
from .errors import ConfigError, FlexError, IOFailure
from .gating import deterministic_gates
from .hwcost import load_lut, realtime_check, system_cost
from .mlp import load_checkpoint, save_checkpoint
from .plotting import render_all
from .signal import (apply_normalizer, candidate_entries, feature_table, fit_normalizer, make_windows,
                     save_csv)

log = logging.getLogger("flexcodesign")


def _config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None) is not None:
        overrides.append(f"output_dir={json.dumps(str(args.out))}")
    return load_config(args.config, overrides)


def cmd_synth_data(args):
    cfg = _config(args)
    if "synthetic" not in cfg.dataset:
        raise ConfigError("config dataset is not synthetic")
    ds = pl.load_dataset(cfg)
    try:
        save_csv(ds, args.csv)
    except OSError as e:
        raise IOFailure(f"cannot write {args.csv}: {e}") from None
    print(f"wrote {len(ds.subjects)} subjects x {len(ds.channels)} channels to {args.csv}")


def cmd_train(args):
    cfg = _config(args)
    ds = pl.load_dataset(cfg)
    windows = make_windows(ds, cfg.window_s)
    plan = pl.kfold_split(ds, cfg.k, cfg.seed)
    seed = pl._fold_seed(cfg.seed, args.fold)
    data = pl.prepare_fold(windows, plan, args.fold, cfg, seed)
    model, layer, _ = pl.train_gated(data, cfg, cfg.lam, cfg.gamma_end, seed, ds.num_classes)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"gated_fold{args.fold}.npz"
    save_checkpoint(path, model, layer, meta={"fold": args.fold, "entries": [list(e) for e in data.entries]})
    for (c, k), z in zip(data.entries, deterministic_gates(layer)):
        print(f"{c:>6} {k:<5} z={z:.4f}")
    print(f"checkpoint: {path}")


def _finish(points, cfg, tune_log=None):
    pl.export(points, cfg.output_dir, tune_log=tune_log, config=cfg.to_dict())
    figs = render_all(points, Path(cfg.output_dir) / "figures")
    print(pl.report(points))
    print(f"results: {Path(cfg.output_dir) / 'pareto.csv'} ({len(points)} points, {len(figs)} figures)")


def cmd_sweep(args):
    cfg = _config(args)
    _finish(pl.run_pipeline(cfg), cfg)


def cmd_run(args):
    cfg = _config(args)
    lam, gend, tune_log = cfg.lam, cfg.gamma_end, None
    if cfg.tune_trials > 0:
        best, tune_log = pl.tune_hyperparams(cfg)
        lam, gend = best["lambda"], best["gamma_end"]
        print(f"tuned: lambda={lam:.4g} gamma_end={gend:.4g}")
    _finish(pl.run_pipeline(cfg, lam, gend), cfg, tune_log)


def cmd_tune(args):
    cfg = _config(args)
    best, records = pl.tune_hyperparams(cfg, args.trials)
    for r in records:
        print(f"trial {r['trial']:>3}  lambda={r['lambda']:.4g}  gamma_end={r['gamma_end']:.3g}  "
              f"acc={r['val_accuracy']:.3f}  cost={r['expected_cost']:.3f}  score={r['score']:.4f}")
    print(f"best: trial {best['trial']} lambda={best['lambda']:.6g} gamma_end={best['gamma_end']:.6g}")


def cmd_simulate(args):
    """NMSE of every extractor against the software references over all windows."""
    cfg = _config(args)
    ds = pl.load_dataset(cfg)
    ws = make_windows(ds, cfg.window_s)
    ws = apply_normalizer(fit_normalizer(ws), ws)
    entries = candidate_entries(ws.channels)
    keys, volts, clipped = extractor_bank(ws, entries, cfg.analog)
    hw = software_values(keys, volts, cfg.analog, ws.samples_per_window)
    sw = feature_table(ws, keys)
    print(f"{'channel':>8} {'kind':<5} {'nmse':>12} {'clipped %':>10}")
    for j, (c, k) in enumerate(keys):
        print(f"{c:>8} {k:<5} {nmse(hw[:, j], sw[:, j]):12.4e} {100 * clipped[:, j].mean():10.1f}")
    if args.trace:
        write_trace(args.trace, adc_input_voltages(keys, volts[0], cfg.analog), cfg.adc)
        print(f"ADC trace of window 0: {args.trace}")


def cmd_cost(args):
    cfg = _config(args)
    model, layer, qmodel, header = load_checkpoint(args.checkpoint)
    if qmodel is None or layer.frozen_mask is None:
        raise ConfigError("cost needs a checkpoint with frozen gates and quantized weights")
    entries = header["meta"].get("entries")
    if entries is None:
        raise ConfigError("checkpoint has no feature entry list")
    lut = load_lut(args.lut or cfg.lut)
    z = layer.frozen_mask
    selected = [e for e, on in zip(entries, z) if on]
    rep = system_cost(selected, qmodel, cfg.adc, lut, cfg.window_s, active_inputs=z > 0)
    ok, margin = realtime_check(rep, lut.budget_ms, cfg.window_s)
    print(json.dumps({"selected": selected, **rep.to_dict(), "realtime_ok": ok, "margin_ms": margin}, indent=1))


def cmd_report(args):
    points = pl.load_points(Path(args.dir) / "pareto.json")
    print(pl.report(points))
    figs = render_all(points, Path(args.dir) / "figures")
    for f in figs:
        print(f"figure: {f}")


def build_parser():
    p = argparse.ArgumentParser(prog="flexcodesign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="run-config JSON file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set train.epochs=20 (repeatable)")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory (overrides output_dir)")
        return sp

    sp = common(sub.add_parser("synth-data", help="write the synthetic dataset as CSV"), out=False)
    sp.add_argument("csv", help="destination CSV path")
    sp.set_defaults(func=cmd_synth_data)

    sp = common(sub.add_parser("train", help="train the gated MLP on one fold"))
    sp.add_argument("--fold", type=int, default=0)
    sp.set_defaults(func=cmd_train)

    common(sub.add_parser("sweep", help="tau sweep with LTP, quantization and costing")).set_defaults(func=cmd_sweep)

    sp = common(sub.add_parser("simulate", help="analog extractor NMSE against software features"), out=False)
    sp.add_argument("--trace", help="write an ADC conversion trace CSV for window 0")
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("cost", help="cost report for a saved checkpoint"), out=False)
    sp.add_argument("checkpoint")
    sp.add_argument("--lut", help="LUT JSON file")
    sp.set_defaults(func=cmd_cost)

    sp = common(sub.add_parser("tune", help="random search over lambda and gamma_end"), out=False)
    sp.add_argument("--trials", type=int, default=8)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("report", help="summarize an output directory and render figures")
    sp.add_argument("dir")
    sp.set_defaults(func=cmd_report)

    common(sub.add_parser("run", help="full pipeline from one config file")).set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FlexError as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code
    except FloatingPointError as e:
        print(f"error (numeric): {e}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
