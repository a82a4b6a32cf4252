"""Lottery-ticket pruning: global magnitude masks with rewind to initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, UsageError
from .gating import GateLayer
from .mlp import MASKED, PARAMS, MlpModel, TrainConfig, predict, train


@dataclass(frozen=True)
class SparsitySchedule:
    sparsities: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.sparsities)
        object.__setattr__(self, "sparsities", s)
        if not s:
            raise ConfigError("sparsity schedule needs at least one round")
        if any(not 0.0 <= v < 1.0 for v in s):
            raise ConfigError("sparsities must lie in [0, 1)")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ConfigError("sparsities must be strictly increasing")

    @classmethod
    def geometric(cls, target: float, rounds: int = 3):
        """Prune the same fraction of the surviving weights in every round."""
        if rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if not 0.0 < target < 1.0:
            return cls((float(target),))
        keep = 1.0 - target
        s = [1.0 - keep ** (t / rounds) for t in range(1, rounds + 1)]
        s[-1] = float(target)
        return cls(tuple(s))

    @property
    def target(self):
        return self.sparsities[-1]

    @property
    def rounds(self):
        return len(self.sparsities)


def magnitude_mask(weights, sparsity: float, frozen_out=None):
    """Binary mask zeroing exactly ceil(sparsity * n) smallest-magnitude entries.

    Ties are broken toward the lower flat index. Entries flagged in
    ``frozen_out`` are always pruned and excluded from the count.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ConfigError("sparsity must lie in [0, 1)")
    w = np.abs(np.asarray(weights, dtype=float).ravel())
    mask = np.ones_like(w)
    eligible = np.arange(w.size)
    if frozen_out is not None:
        out = np.asarray(frozen_out, dtype=bool).ravel()
        mask[out] = 0.0
        eligible = eligible[~out]
    k = math.ceil(sparsity * eligible.size - 1e-12)
    if k:
        order = eligible[np.argsort(w[eligible], kind="stable")]
        mask[order[:k]] = 0.0
    return mask


def _flat(model: MlpModel):
    return np.concatenate([getattr(model, k).ravel() for k in MASKED])


def _unflat(model: MlpModel, flat):
    out, i = {}, 0
    for k in MASKED:
        n = getattr(model, k).size
        out[k] = flat[i:i + n].reshape(getattr(model, k).shape)
        i += n
    return out


def rewind(model: MlpModel, mask: dict):
    """Reset to init_snapshot ⊙ mask (biases to their initial values)."""
    if not model.init_snapshot:
        raise UsageError("model has no init snapshot to rewind to")
    params = {k: np.array(model.init_snapshot[k], dtype=float) for k in PARAMS}
    for k in MASKED:
        params[k] = params[k] * mask[k]
    model.mask = {k: np.array(mask[k], dtype=float) for k in MASKED}
    model.set_params(params)
    return model


def rewind_is_exact(model: MlpModel) -> bool:
    for k in PARAMS:
        cur, ref = getattr(model, k), model.init_snapshot[k]
        keep = model.mask[k].astype(bool) if k in model.mask else np.ones(cur.shape, dtype=bool)
        if not np.array_equal(cur[keep], ref[keep]) or np.any(cur[~keep] != 0):
            return False
    return True


def ltp_round(model: MlpModel, layer: GateLayer, X_train, y_train, mask: dict, cfg: TrainConfig,
              retrain_epochs: Optional[int] = None, X_val=None, y_val=None, on_step=None):
    """Rewind to W0 ⊙ m and retrain the sparse net with frozen gate logits."""
    if layer is not None and not layer.frozen:
        raise UsageError("gate layer must be frozen before pruning-aware retraining")
    rewind(model, mask)
    epochs = cfg.retrain_epochs if retrain_epochs is None else retrain_epochs
    if epochs:
        train(model, layer, X_train, y_train, X_val, y_val, cfg, epochs=epochs, on_step=on_step)
    return model


def _accuracy(model, layer, X, y):
    if X is None or len(X) == 0:
        return float("nan")
    z = None if layer is None else layer.frozen_mask
    return float(np.mean(predict(model, X, z) == np.asarray(y)))


def ltp_run(model: MlpModel, layer: GateLayer, X_train, y_train, X_val, y_val,
            schedule: SparsitySchedule, cfg: TrainConfig, frozen_out: Optional[dict] = None,
            on_step=None):
    """Iterative magnitude pruning with rewind over the rounds of ``schedule``.

    ``frozen_out`` optionally marks weights that must stay pruned (e.g. rows of
    removed input features); sparsities then apply to the remaining weights.
    Returns ``(model, rounds)`` where each round records the requested and
    achieved sparsity, validation accuracy and whether the rewind was exact.
    """
    rounds = []
    fo = None if frozen_out is None else np.concatenate([np.asarray(frozen_out[k]).ravel() for k in MASKED])
    for t, s in enumerate(schedule.sparsities):
        flat_mask = magnitude_mask(_flat(model), s, fo)
        mask = _unflat(model, flat_mask)
        rewind(model, mask)
        exact = rewind_is_exact(model)
        if cfg.retrain_epochs:
            train(model, layer, X_train, y_train, X_val, y_val, cfg,
                  epochs=cfg.retrain_epochs, on_step=on_step)
        rounds.append({
            "round": t,
            "target_sparsity": s,
            "sparsity": 1.0 - float(flat_mask.sum()) / flat_mask.size,
            "val_accuracy": _accuracy(model, layer, X_val, y_val),
            "rewind_exact": exact,
        })
    return model, rounds
