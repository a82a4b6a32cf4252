"""Behavioral models of the analog Min/Max/Mean/Sum extractor circuits.

Signals are handled as zero-order-hold sample sequences. Every simulator
accepts arrays shaped ``(..., T)`` and works along the last axis, so a whole
window set can be simulated at once; the circuits reset at each window start.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError, UsageError
from .signal import KINDS, Window, WindowSet, candidate_entries


@dataclass(frozen=True)
class AnalogConfig:
    v_sig_lo: float = 1.0
    v_sig_hi: float = 2.0
    v_th: float = 0.0
    leak_rate: float = 0.0  # V/s
    rc_product: Optional[float] = None  # s; None means the window duration
    gain_n: float = 2.0
    residual_scale: Optional[float] = None  # None means samples_per_window / gain_n
    swing_lo: float = 0.0
    swing_hi: float = 3.0
    v_l: Optional[float] = None
    v_h: Optional[float] = None
    v_ms: Optional[float] = None

    def __post_init__(self):
        if not self.v_sig_lo < self.v_sig_hi:
            raise ConfigError("v_sig_lo must be below v_sig_hi")
        if not self.swing_lo < self.swing_hi:
            raise ConfigError("swing_lo must be below swing_hi")
        if self.v_th < 0 or self.leak_rate < 0:
            raise ConfigError("v_th and leak_rate must be non-negative")
        if self.rc_product is not None and self.rc_product <= 0:
            raise ConfigError("rc_product must be positive")
        if self.gain_n < 1:
            raise ConfigError("gain_n must be at least 1")

    @classmethod
    def ideal(cls, **kw):
        """Zero diode drop, no leakage, exact-mean integrator, unbounded swing."""
        base = dict(v_th=0.0, leak_rate=0.0, rc_product=None,
                    swing_lo=-np.inf, swing_hi=np.inf)
        base.update(kw)
        return cls(**base)

    @property
    def span(self):
        return self.v_sig_hi - self.v_sig_lo

    @property
    def reset_low(self):
        return self.v_sig_lo if self.v_l is None else self.v_l

    @property
    def reset_high(self):
        return self.v_sig_hi if self.v_h is None else self.v_h

    @property
    def mid_scale(self):
        return 0.5 * (self.v_sig_lo + self.v_sig_hi) if self.v_ms is None else self.v_ms

    def residual(self, samples_per_window: int) -> float:
        if self.residual_scale is not None:
            return self.residual_scale
        return samples_per_window / self.gain_n

    def with_(self, **kw) -> "AnalogConfig":
        return replace(self, **kw)

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            out[k] = None if v is None else (str(v) if np.isinf(v) else v)
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (float(v) if isinstance(v, str) else v) for k, v in d.items()})


def to_voltage(x01, cfg: AnalogConfig):
    return cfg.v_sig_lo + np.asarray(x01, dtype=float) * cfg.span


def from_voltage(v, cfg: AnalogConfig):
    return np.clip((np.asarray(v, dtype=float) - cfg.v_sig_lo) / cfg.span, 0.0, 1.0)


def _clip(v, cfg):
    return np.clip(v, cfg.swing_lo, cfg.swing_hi)


def _scalar(x, like):
    return float(x) if np.ndim(like) == 1 else x


def sim_peak_detector(v_in, dt: float, cfg: AnalogConfig, mode: str = "Max"):
    """Diode/hold-capacitor detector; ``mode`` is ``"Max"`` (peak) or ``"Min"`` (valley).

    The capacitor settles fully in the step where the diode conducts and
    otherwise droops toward its reset rail by ``leak_rate * dt``.
    """
    v = np.asarray(v_in, dtype=float)
    if v.shape[-1] == 0:
        raise UsageError("empty input sequence")
    if dt <= 0:
        raise UsageError("dt must be positive")
    droop = cfg.leak_rate * dt
    if mode == "Max":
        rail = cfg.reset_low
        vc = np.full(v.shape[:-1], rail)
        for t in range(v.shape[-1]):
            x = v[..., t]
            vc = np.where(x > vc + cfg.v_th, x - cfg.v_th, np.maximum(rail, vc - droop))
    elif mode == "Min":
        rail = cfg.reset_high
        vc = np.full(v.shape[:-1], rail)
        for t in range(v.shape[-1]):
            x = v[..., t]
            vc = np.where(x < vc - cfg.v_th, x + cfg.v_th, np.minimum(rail, vc + droop))
    else:
        raise UsageError(f"mode must be 'Max' or 'Min', got {mode!r}")
    return _scalar(_clip(vc, cfg), v)


def sim_integrator_mean(v_in, dt: float, cfg: AnalogConfig):
    v = np.asarray(v_in, dtype=float)
    if dt <= 0:
        raise UsageError("dt must be positive")
    rc = cfg.rc_product if cfg.rc_product is not None else v.shape[-1] * dt
    vms = cfg.mid_scale
    out = vms + ((v - vms).sum(axis=-1) * dt) / rc
    return _scalar(_clip(out, cfg), v)


def sim_sum(v_mean, cfg: AnalogConfig):
    """Non-inverting gain stage on the Mean output. Returns ``(volts, clipped)``."""
    raw = cfg.gain_n * np.asarray(v_mean, dtype=float)
    out = _clip(raw, cfg)
    clipped = raw != out
    if np.ndim(out) == 0:
        return float(out), bool(clipped)
    return out, clipped


def sum_to_adc_input(v_sum, cfg: AnalogConfig):
    """Level-adjust the Sum output back into the signal range ahead of the ADC mux."""
    return np.asarray(v_sum, dtype=float) / cfg.gain_n


def sum_to_software(v_sum, cfg: AnalogConfig, samples_per_window: int):
    """Recover the normalized-domain Sum after applying the residual factor in software."""
    total_v = cfg.residual(samples_per_window) * np.asarray(v_sum, dtype=float)
    return (total_v - samples_per_window * cfg.v_sig_lo) / cfg.span


@dataclass(frozen=True)
class AnalogFeatureOut:
    entries: tuple  # ((channel, kind, volts, clipped), ...)

    @property
    def keys(self):
        return [(c, k) for c, k, _, _ in self.entries]

    @property
    def voltages(self):
        return np.array([v for _, _, v, _ in self.entries])

    @property
    def clipped(self):
        return np.array([f for _, _, _, f in self.entries], dtype=bool)


def _ordered_selection(selection, channels):
    selection = list(selection)
    if not selection:
        raise ConfigError("empty feature selection")
    for c, k in selection:
        if c not in channels:
            raise ConfigError(f"selection references absent channel {c!r}")
        if k not in KINDS:
            raise ConfigError(f"unknown feature kind {k!r}")
    wanted = set(map(tuple, selection))
    return [e for e in candidate_entries(channels) if e in wanted]


def extractor_bank(ws: WindowSet, selection, cfg: AnalogConfig):
    """Simulate the selected extractors on every window of a normalized set.

    Returns ``(keys, volts, clipped)`` with ``volts`` shaped (n_windows, n_selected).
    """
    keys = _ordered_selection(selection, ws.channels)
    v = to_voltage(ws.samples, cfg)
    dt = ws.t_step_s
    volts = np.zeros((len(ws), len(keys)))
    clipped = np.zeros_like(volts, dtype=bool)
    means = {}
    for j, (c, k) in enumerate(keys):
        x = v[:, ws.channels.index(c), :]
        if k in ("Max", "Min"):
            out = np.asarray(sim_peak_detector(x, dt, cfg, k))
            flag = (out == cfg.swing_lo) | (out == cfg.swing_hi)
        else:
            if c not in means:
                means[c] = np.asarray(sim_integrator_mean(x, dt, cfg))
            out = means[c]
            flag = (out == cfg.swing_lo) | (out == cfg.swing_hi)
            if k == "Sum":
                out, flag = sim_sum(out, cfg)
                flag = np.asarray(flag)
        volts[:, j] = out
        clipped[:, j] = flag
    return keys, volts, clipped


def run_extractor_bank(window: Window, selection, cfg: AnalogConfig, channels=None) -> AnalogFeatureOut:
    channels = tuple(channels or (f"ch{i}" for i in range(window.samples.shape[0])))
    ws = WindowSet(channels, window.t_step_s, window.samples[None], [window.label], [window.subject_id])
    keys, volts, clipped = extractor_bank(ws, selection, cfg)
    return AnalogFeatureOut(tuple((c, k, float(volts[0, j]), bool(clipped[0, j]))
                                  for j, (c, k) in enumerate(keys)))


def adc_input_voltages(keys, volts, cfg: AnalogConfig):
    """Voltages presented to the ADC mux, in key order."""
    out = np.array(volts, dtype=float, copy=True)
    for j, (_, k) in enumerate(keys):
        if k == "Sum":
            out[..., j] = sum_to_adc_input(out[..., j], cfg)
    return out


def software_values(keys, volts, cfg: AnalogConfig, samples_per_window: int):
    """Map extractor voltages back to normalized-domain feature values (Sum unscaled)."""
    out = np.array(volts, dtype=float, copy=True)
    for j, (_, k) in enumerate(keys):
        if k == "Sum":
            out[..., j] = sum_to_software(out[..., j], cfg, samples_per_window)
        else:
            out[..., j] = (out[..., j] - cfg.v_sig_lo) / cfg.span
    return out


def nmse(hw, sw) -> float:
    hw = np.asarray(hw, dtype=float).ravel()
    sw = np.asarray(sw, dtype=float).ravel()
    if hw.shape != sw.shape or hw.size == 0:
        raise UsageError("nmse needs two equal, non-empty sequences")
    energy = float(np.sum(sw ** 2))
    if energy == 0.0:
        raise NumericError("nmse undefined: reference signal has zero energy")
    return float(np.sum((hw - sw) ** 2) / energy)
