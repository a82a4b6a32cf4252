"""Figures written next to the delimited report files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COMPONENTS = ("analog_features", "adc", "classifier")
COLORS = {"analog_features": "#4c72b0", "adc": "#dd8452", "classifier": "#55a868"}


def _save(fig, path, dpi=150):
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_pareto(points, path):
    """Accuracy versus total area, one marker series per fold, front points joined."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for fold in sorted({p.fold for p in points}):
        pts = [p for p in points if p.fold == fold]
        ax.scatter([p.area for p in pts], [100 * p.acc_analog for p in pts], s=18, alpha=0.5,
                   label=f"fold {fold}")
        front = sorted((p for p in pts if p.on_front), key=lambda p: p.area)
        if front:
            ax.plot([p.area for p in front], [100 * p.acc_analog for p in front], "-", lw=1)
    ax.set_xlabel("total area (mm$^2$)")
    ax.set_ylabel("accuracy, analog path (%)")
    ax.grid(True, ls="--", alpha=0.4)
    if points:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_tau_sweep(points, path):
    taus = sorted({p.tau for p in points})
    fig, ax1 = plt.subplots(figsize=(5.5, 4))
    counts = [np.mean([p.selected_count for p in points if p.tau == t]) for t in taus]
    acc = [100 * np.mean([p.acc_analog for p in points if p.tau == t]) for t in taus]
    ax1.plot(taus, counts, "o-", color="#4c72b0")
    ax1.set_xscale("log")
    ax1.set_xlabel(r"gate threshold $\tau$")
    ax1.set_ylabel("selected features (fold mean)", color="#4c72b0")
    ax2 = ax1.twinx()
    ax2.plot(taus, acc, "s--", color="#c44e52")
    ax2.set_ylabel("accuracy (%)", color="#c44e52")
    return _save(fig, path)


def plot_area_breakdown(points, path):
    taus = sorted({p.tau for p in points})
    fig, ax = plt.subplots(figsize=(5.5, 4))
    bottom = np.zeros(len(taus))
    x = np.arange(len(taus))
    for comp in COMPONENTS:
        vals = np.array([np.mean([p.cost.area_mm2[comp] for p in points if p.tau == t]) for t in taus])
        ax.bar(x, vals, bottom=bottom, color=COLORS[comp], label=comp.replace("_", " "))
        bottom += vals
    ax.set_xticks(x, [f"{t:g}" for t in taus])
    ax.set_xlabel(r"gate threshold $\tau$")
    ax.set_ylabel("area (mm$^2$, fold mean)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def render_all(points, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not points:
        return []
    return [
        plot_pareto(points, out / "pareto_front.png"),
        plot_tau_sweep(points, out / "tau_sweep.png"),
        plot_area_breakdown(points, out / "area_breakdown.png"),
    ]
