"""Run configuration: one JSON document, overridable with ``key.path=value`` strings."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .adc import AdcConfig
from .analog import AnalogConfig
from .errors import ConfigError, IOFailure
from .gating import GammaSchedule
from .mlp import TrainConfig
from .prune import SparsitySchedule
from .signal import SyntheticSpec

DEFAULT_TAUS = (0.01, 0.05, 0.1, 0.2, 0.5)


@dataclass
class RunConfig:
    dataset: dict = field(default_factory=lambda: {"synthetic": asdict(SyntheticSpec())})
    window_s: float = 1.0
    k: int = 5
    folds: Optional[list] = None  # subset of fold indices to run; None runs all
    train: TrainConfig = field(default_factory=TrainConfig)
    gamma_start: float = 2.0
    gamma_end: float = 0.1
    lam: float = 0.05
    lambda_range: tuple = (1e-5, 1e-1)
    gamma_end_range: tuple = (0.05, 1.0)
    tune_trials: int = 0
    tune_epochs: int = 20
    tune_cost_weight: float = 0.5
    taus: tuple = DEFAULT_TAUS
    sparsity_target: float = 0.5
    sparsity_rounds: int = 3
    weight_bits: int = 8
    input_bits: int = 4
    analog: AnalogConfig = field(default_factory=AnalogConfig)
    adc: AdcConfig = field(default_factory=AdcConfig)
    lut: Optional[str] = None
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        self.taus = tuple(float(t) for t in self.taus)
        if any(not 0.0 <= t <= 1.0 for t in self.taus):
            raise ConfigError("tau values must lie in [0, 1]")
        if any(b <= a for a, b in zip(self.taus, self.taus[1:])):
            raise ConfigError("tau values must be strictly increasing")
        if self.window_s <= 0:
            raise ConfigError("window_s must be positive")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.input_bits != self.adc.n_bits:
            raise ConfigError("input_bits must match the ADC resolution")
        lo, hi = self.lambda_range
        if not 0 < lo <= hi:
            raise ConfigError("lambda_range must be positive and ordered")
        lo, hi = self.gamma_end_range
        if not 0 < lo <= hi:
            raise ConfigError("gamma_end_range must be positive and ordered")
        if not set(self.dataset) & {"synthetic", "csv"}:
            raise ConfigError("dataset needs a 'synthetic' or 'csv' entry")
        self.gamma_schedule()
        self.sparsity_schedule()

    def gamma_schedule(self, gamma_end=None, epochs=None) -> GammaSchedule:
        return GammaSchedule(self.gamma_start, self.gamma_end if gamma_end is None else gamma_end,
                             self.train.epochs if epochs is None else epochs)

    def sparsity_schedule(self) -> SparsitySchedule:
        return SparsitySchedule.geometric(self.sparsity_target, self.sparsity_rounds)

    def to_dict(self):
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "analog":
                v = v.to_dict()
            elif f.name in ("adc", "train"):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = copy.deepcopy(v)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "train" in d:
                d["train"] = TrainConfig(**d["train"])
            if "analog" in d:
                d["analog"] = AnalogConfig.from_dict(d["analog"])
            if "adc" in d:
                d["adc"] = AdcConfig(**d["adc"])
            for key in ("taus", "lambda_range", "gamma_end_range"):
                if key in d:
                    d[key] = tuple(d[key])
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad config: {e}") from None


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    d = copy.deepcopy(d)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-table value")
        node[parts[-1]] = _parse_value(value)
    return d


def load_config(path=None, overrides=None) -> RunConfig:
    d = RunConfig().to_dict()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as e:
            raise IOFailure(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        d = _merge(d, user)
    return RunConfig.from_dict(apply_overrides(d, overrides))


def _merge(base, user):
    out = dict(base)
    for k, v in user.items():
        if k == "dataset":
            out[k] = v
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out
