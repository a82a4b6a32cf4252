"""Concrete (Gumbel-sigmoid) input gates with a hardware-cost penalty."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, UsageError

U_EPS = 1e-7
INIT_LOG_ALPHA = 2.2


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class GateLayer:
    log_alpha: np.ndarray
    costs: np.ndarray
    gamma: float = 2.0
    lam: float = 0.0
    warmup_epochs: int = 0
    frozen_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.log_alpha = np.array(self.log_alpha, dtype=float)
        self.costs = np.array(self.costs, dtype=float)
        if self.log_alpha.shape != self.costs.shape or self.log_alpha.ndim != 1:
            raise ConfigError("log_alpha and costs must be vectors of equal length")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if np.any(self.costs < 0):
            raise ConfigError("costs must be non-negative")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.frozen_mask is not None:
            self.frozen_mask = np.array(self.frozen_mask, dtype=float)

    @classmethod
    def create(cls, costs, init=INIT_LOG_ALPHA, **kw):
        costs = np.asarray(costs, dtype=float)
        return cls(np.full(costs.shape, float(init)), costs, **kw)

    @property
    def d(self):
        return self.log_alpha.shape[0]

    @property
    def frozen(self):
        return self.frozen_mask is not None

    def copy(self):
        return GateLayer(self.log_alpha.copy(), self.costs.copy(), self.gamma, self.lam,
                         self.warmup_epochs, None if self.frozen_mask is None else self.frozen_mask.copy())


@dataclass(frozen=True)
class GateSample:
    z: np.ndarray
    s: np.ndarray
    u: np.ndarray
    gamma: float


def concrete(log_alpha, u, gamma):
    """s = sigmoid((ln u - ln(1-u) + log_alpha) / gamma)."""
    u = np.asarray(u, dtype=float)
    return sigmoid((np.log(u) - np.log1p(-u) + log_alpha) / gamma)


def sample_gates(layer: GateLayer, rng=None, u=None) -> GateSample:
    """Draw one relaxed gate vector; pass ``u`` to fix the noise."""
    if layer.frozen:
        raise UsageError("gate layer is frozen; use deterministic_gates")
    if u is None:
        u = rng.uniform(U_EPS, 1.0 - U_EPS, size=layer.d)
    s = concrete(layer.log_alpha, u, layer.gamma)
    return GateSample(np.clip(s, 0.0, 1.0), s, np.asarray(u, dtype=float), layer.gamma)


def deterministic_gates(layer: GateLayer):
    if layer.frozen:
        return layer.frozen_mask.copy()
    return sigmoid(layer.log_alpha)


def apply_gates(x, z):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape[-1] != z.shape[-1]:
        raise UsageError(f"feature width {x.shape[-1]} does not match {z.shape[-1]} gates")
    return x * z


def cost_loss(layer: GateLayer) -> float:
    return float(np.dot(sigmoid(layer.log_alpha), layer.costs))


def cost_grad(layer: GateLayer):
    p = sigmoid(layer.log_alpha)
    return p * (1.0 - p) * layer.costs


def gate_backward(upstream, sample: Optional[GateSample], layer: GateLayer, epoch: int):
    """Gradient of the task loss w.r.t. log_alpha through a cached Concrete sample.

    Zero during the warm-up epochs. The clamp is treated as identity since
    the sigmoid never leaves (0, 1). The cost-term gradient is added by the
    caller.
    """
    if epoch < layer.warmup_epochs:
        return np.zeros(layer.d)
    if sample is None:
        raise UsageError("no cached gate sample; call sample_gates first")
    s = sample.s
    return np.asarray(upstream, dtype=float) * s * (1.0 - s) / sample.gamma


@dataclass(frozen=True)
class GammaSchedule:
    gamma_start: float = 2.0
    gamma_end: float = 0.1
    total_epochs: int = 50
    mode: str = "geometric"

    def __post_init__(self):
        if self.gamma_start <= 0 or self.gamma_end <= 0:
            raise ConfigError("gamma values must be positive")
        if self.gamma_end > self.gamma_start:
            raise ConfigError("gamma_end must not exceed gamma_start")
        if self.mode != "geometric":
            raise ConfigError(f"unsupported gamma schedule {self.mode!r}")


def anneal_gamma(schedule: GammaSchedule, epoch: int) -> float:
    if schedule.gamma_start == schedule.gamma_end or schedule.total_epochs <= 1:
        return schedule.gamma_start
    if not 0 <= epoch < schedule.total_epochs:
        raise UsageError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    frac = epoch / (schedule.total_epochs - 1)
    return schedule.gamma_start * (schedule.gamma_end / schedule.gamma_start) ** frac


def prune_gates(layer: GateLayer, tau: float):
    """Freeze the layer to hard gates ``z > tau`` and return the mask."""
    if layer.frozen:
        raise UsageError("gate layer already frozen")
    if not 0.0 <= tau <= 1.0:
        raise ConfigError("tau must lie in [0, 1]")
    mask = (deterministic_gates(layer) > tau).astype(float)
    layer.frozen_mask = mask
    return mask.copy()
