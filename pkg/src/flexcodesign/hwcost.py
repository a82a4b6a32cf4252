"""Area, power, latency and energy estimates for a selected design.

All units are explicit: mm², mW, ms, µJ (mW x ms), Hz.

In the LUT the ``Sum`` entry is the gain stage alone. A Sum output needs a
Mean integrator on its channel, so its cost includes the Mean entry unless
that Mean feature is itself selected and the integrator is shared.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .errors import ConfigError, IOFailure


@dataclass(frozen=True)
class BlockCost:
    area_mm2: float
    power_mw: float


@dataclass(frozen=True)
class MlpCoefficients:
    a_mul_mm2_per_bit2: float = 2e-4
    a_add_mm2_per_bit: float = 3e-4
    a_reg_mm2_per_bit: float = 5e-4
    zero_weight_factor: float = 0.0
    pow2_weight_factor: float = 0.1
    activation_bits: int = 8
    latency_cycles: int = 3
    power_density_mw_per_mm2: float = 0.5
    overhead_mm2: float = 0.01


@dataclass(frozen=True)
class CostLut:
    features: dict
    adc: BlockCost = BlockCost(0.02, 0.0814)
    mlp: MlpCoefficients = MlpCoefficients()
    clock_hz: float = 10_000.0
    budget_ms: float = 20.0
    power_gating: bool = True

    def __post_init__(self):
        vals = [self.adc.area_mm2, self.adc.power_mw, self.clock_hz, self.budget_ms]
        vals += [v for b in self.features.values() for v in (b.area_mm2, b.power_mw)]
        vals += [v for v in asdict(self.mlp).values()]
        if any(v < 0 for v in vals):
            raise ConfigError("LUT entries must be non-negative")
        if self.clock_hz <= 0:
            raise ConfigError("clock_hz must be positive")

    def feature(self, kind) -> BlockCost:
        try:
            return self.features[kind]
        except KeyError:
            raise ConfigError(f"LUT has no entry for feature kind {kind!r}") from None

    @classmethod
    def from_dict(cls, d):
        try:
            feats = {k: BlockCost(float(v["area_mm2"]), float(v["power_mw"])) for k, v in d["features"].items()}
            adc = BlockCost(float(d["adc"]["area_mm2"]), float(d["adc"]["power_mw"]))
            mlp = MlpCoefficients(**d.get("mlp", {}))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed LUT: {e}") from None
        return cls(feats, adc, mlp, float(d.get("clock_hz", 10_000.0)), float(d.get("budget_ms", 20.0)),
                   bool(d.get("power_gating", True)))

    def to_dict(self):
        return {
            "features": {k: asdict(v) for k, v in self.features.items()},
            "adc": asdict(self.adc),
            "mlp": asdict(self.mlp),
            "clock_hz": self.clock_hz,
            "budget_ms": self.budget_ms,
            "power_gating": self.power_gating,
        }


def default_lut() -> CostLut:
    text = resources.files("flexcodesign").joinpath("data/default_lut.json").read_text()
    return CostLut.from_dict(json.loads(text))


def load_lut(path=None) -> CostLut:
    if path is None:
        return default_lut()
    try:
        with open(path, encoding="utf-8") as fh:
            return CostLut.from_dict(json.load(fh))
    except OSError as e:
        raise IOFailure(f"cannot read LUT {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"LUT {path} is not valid JSON: {e}") from None


def _block_vector(entries, lut: CostLut, selected, attr):
    entries = [tuple(e) for e in entries]
    chosen = None if selected is None else {tuple(e) for e in selected}
    out = np.zeros(len(entries))
    for i, (ch, kind) in enumerate(entries):
        v = getattr(lut.feature(kind), attr)
        if kind == "Sum":
            shared = chosen is not None and (ch, "Mean") in chosen
            if not shared:
                v += getattr(lut.feature("Mean"), attr)
        out[i] = v
    return out


def feature_cost_vector(entries, lut: CostLut, selected=None):
    """Per-entry area (mm²). With ``selected`` given, Sum shares a selected Mean."""
    return _block_vector(entries, lut, selected, "area_mm2")


def feature_power_vector(entries, lut: CostLut, selected=None):
    return _block_vector(entries, lut, selected, "power_mw")


@dataclass(frozen=True)
class MlpCost:
    area_mm2: float
    power_mw: float
    latency_cycles: int
    multipliers: int
    adders: int


def _is_pow2(q):
    a = np.abs(q)
    return (a > 0) & ((a & (a - 1)) == 0)


def _layer_area(q, bw, bx, c: MlpCoefficients):
    """Multiplier and adder-tree area of one fully-parallel layer (columns are neurons)."""
    q = np.asarray(q, dtype=np.int64)
    nz = q != 0
    factor = np.where(nz, np.where(_is_pow2(q), c.pow2_weight_factor, 1.0), c.zero_weight_factor)
    mul = float(factor.sum()) * c.a_mul_mm2_per_bit2 * bw * bx
    add, n_add = 0.0, 0
    for fan_in in nz.sum(axis=0):
        if fan_in == 0:
            continue
        width = bw + bx + math.ceil(math.log2(fan_in + 1))
        add += fan_in * width * c.a_add_mm2_per_bit  # fan_in products + bias -> fan_in adders
        n_add += int(fan_in)
    return mul, add, int(nz.sum()), n_add


def mlp_cost(qmodel, coeffs: MlpCoefficients = None, active_inputs=None) -> MlpCost:
    """Bespoke fully-parallel classifier cost from quantized weights.

    Every nonzero weight code costs one multiplier (bilinear in operand bit
    widths, discounted for powers of two); each neuron sums its products and
    bias with ``fan_in`` adders at the accumulated width. Registers hold the
    ADC inputs and the class outputs. Rows of inactive inputs are ignored.
    """
    c = coeffs or MlpCoefficients()
    q1 = np.asarray(qmodel.q["W1"])
    q2 = np.asarray(qmodel.q["W2"])
    if active_inputs is not None:
        q1 = q1[np.asarray(active_inputs, dtype=bool)]
    bx = qmodel.input_bits
    m1, a1, n1, k1 = _layer_area(q1, qmodel.bits, bx, c)
    m2, a2, n2, k2 = _layer_area(q2, qmodel.bits, c.activation_bits, c)
    reg_bits = q1.shape[0] * bx + q2.shape[1] * c.activation_bits
    area = m1 + a1 + m2 + a2 + reg_bits * c.a_reg_mm2_per_bit + c.overhead_mm2
    return MlpCost(area, area * c.power_density_mw_per_mm2, c.latency_cycles, n1 + n2, k1 + k2)


@dataclass
class CostReport:
    area_mm2: dict
    power_mw: dict
    latency_ms: dict
    energy_uj: float
    active_ms: dict = field(default_factory=dict)

    def to_dict(self):
        return {"area_mm2": dict(self.area_mm2), "power_mw": dict(self.power_mw),
                "latency_ms": dict(self.latency_ms), "energy_uj": self.energy_uj,
                "active_ms": dict(self.active_ms)}

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["area_mm2"]), dict(d["power_mw"]), dict(d["latency_ms"]),
                   float(d["energy_uj"]), dict(d.get("active_ms", {})))


def system_cost(selection, qmodel, adc_cfg, lut: CostLut, window_s: float = 1.0,
                active_inputs=None) -> CostReport:
    """Aggregate extractor, ADC and classifier costs for one design.

    Active time per component: extractors integrate over the whole window,
    the ADC only while converting, the classifier only for its cycles. With
    power gating off, ADC and classifier are charged for the whole window.
    """
    selection = [tuple(e) for e in selection]
    n = len(selection)
    feat_area = float(feature_cost_vector(selection, lut, selection).sum()) if n else 0.0
    feat_power = float(feature_power_vector(selection, lut, selection).sum()) if n else 0.0
    adc_area = lut.adc.area_mm2 if n else 0.0
    adc_power = lut.adc.power_mw if n else 0.0
    if qmodel is not None:
        mc = mlp_cost(qmodel, lut.mlp, active_inputs)
        clf_area, clf_power, cycles = mc.area_mm2, mc.power_mw, mc.latency_cycles
    else:
        clf_area = clf_power = 0.0
        cycles = 0
    adc_ms = n * adc_cfg.t_conv_s * 1e3
    mlp_ms = cycles / lut.clock_hz * 1e3
    window_ms = window_s * 1e3
    active = {
        "analog_features": window_ms if n else 0.0,
        "adc": adc_ms if lut.power_gating else (window_ms if n else 0.0),
        "classifier": mlp_ms if lut.power_gating else window_ms,
    }
    power = {"analog_features": feat_power, "adc": adc_power, "classifier": clf_power}
    energy = sum(power[k] * active[k] for k in power)
    power["active"] = feat_power + adc_power + clf_power
    area = {"analog_features": feat_area, "adc": adc_area, "classifier": clf_area,
            "total": feat_area + adc_area + clf_area}
    latency = {"adc_total": adc_ms, "mlp": mlp_ms, "total": adc_ms + mlp_ms}
    return CostReport(area, power, latency, energy, active)


def realtime_check(report: CostReport, budget_ms: float = 20.0, window_s: float = 1.0):
    """``(ok, margin_ms)``: ok iff latency is under the budget and the window period."""
    lat = report.latency_ms["total"]
    ok = lat < budget_ms and lat < window_s * 1e3
    return bool(ok), budget_ms - lat
