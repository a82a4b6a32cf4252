"""Bit-accurate SAR ADC with an affine R-2R DAC and a serial feature mux."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .analog import AnalogConfig, AnalogFeatureOut, adc_input_voltages, to_voltage
from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class AdcConfig:
    n_bits: int = 4
    v_dac_lo: float = 0.98
    v_dac_hi: float = 1.95
    t_conv_s: float = 5e-4

    def __post_init__(self):
        if not 1 <= self.n_bits <= 16:
            raise ConfigError("n_bits must be in [1, 16]")
        if not self.v_dac_lo < self.v_dac_hi:
            raise ConfigError("v_dac_lo must be below v_dac_hi")
        if self.t_conv_s <= 0:
            raise ConfigError("t_conv_s must be positive")

    @property
    def max_code(self) -> int:
        return (1 << self.n_bits) - 1

    @property
    def lsb(self) -> float:
        return (self.v_dac_hi - self.v_dac_lo) / self.max_code

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def matched(cls, analog: AnalogConfig, n_bits: int = 4, **kw):
        """DAC range whose floor transfer equals round-to-nearest on the signal range."""
        lsb = analog.span / ((1 << n_bits) - 1)
        return cls(n_bits=n_bits, v_dac_lo=analog.v_sig_lo - lsb / 2,
                   v_dac_hi=analog.v_sig_hi - lsb / 2, **kw)


def dac_level(code, cfg: AdcConfig):
    c = np.asarray(code)
    if np.any(c < 0) or np.any(c > cfg.max_code):
        raise UsageError(f"code out of range [0, {cfg.max_code}]")
    out = cfg.v_dac_lo + c * ((cfg.v_dac_hi - cfg.v_dac_lo) / cfg.max_code)
    # pin the top code to v_dac_hi exactly
    out = np.where(c == cfg.max_code, cfg.v_dac_hi, out)
    return float(out) if out.ndim == 0 else out


def _ge(v_in, v_dac):
    return v_in >= v_dac


def sar_convert(v_in, cfg: AdcConfig, comparator=_ge, trace=None):
    """Successive approximation, MSB first; a bit is kept when the comparator is high.

    ``comparator(v_in, v_dac)`` is called once per bit. If ``trace`` is a list,
    the per-bit decisions (MSB first) are appended to it.
    """
    v = np.asarray(v_in, dtype=float)
    code = np.zeros(v.shape, dtype=np.int64)
    decisions = []
    for bit in range(cfg.n_bits - 1, -1, -1):
        trial = code | (1 << bit)
        keep = np.asarray(comparator(v, dac_level(trial, cfg)), dtype=bool)
        code = np.where(keep, trial, code)
        decisions.append(keep)
    if trace is not None:
        trace.extend(decisions)
    return int(code) if code.ndim == 0 else code


def code_to_input(code, cfg: AdcConfig):
    c = np.asarray(code)
    if np.any(c < 0) or np.any(c > cfg.max_code):
        raise UsageError(f"code out of range [0, {cfg.max_code}]")
    out = c / cfg.max_code
    return float(out) if out.ndim == 0 else out


def adc_transfer(x01, analog: AnalogConfig, cfg: AdcConfig):
    """Digital input seen by the classifier for an ideal feature value ``x01``."""
    return code_to_input(sar_convert(to_voltage(x01, analog), cfg), cfg)


def convert_bank(features, cfg: AdcConfig, analog: AnalogConfig = None):
    """Convert features one after another through the shared ADC.

    ``features`` is an :class:`AnalogFeatureOut` or a sequence of voltages.
    With ``analog`` given, Sum outputs pass through their level-adjust stage.
    Returns ``(codes, total_time_s)``.
    """
    if isinstance(features, AnalogFeatureOut):
        volts = features.voltages
        if analog is not None:
            volts = adc_input_voltages(features.keys, volts, analog)
    else:
        volts = np.asarray(features, dtype=float)
    codes = [int(c) for c in np.atleast_1d(sar_convert(volts, cfg))] if len(volts) else []
    return codes, len(codes) * cfg.t_conv_s


def write_trace(path, volts, cfg: AdcConfig) -> None:
    """Dump a per-conversion debug trace: feature index, input volts, code, bit decisions."""
    volts = np.atleast_1d(np.asarray(volts, dtype=float))
    decisions = []
    codes = np.atleast_1d(sar_convert(volts, cfg, trace=decisions))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_index", "input_volts", "code", "bit_decisions"])
        for i, (v, c) in enumerate(zip(volts, codes)):
            bits = "".join("1" if np.atleast_1d(d)[i] else "0" for d in decisions)
            w.writerow([i, repr(float(v)), int(c), bits])
