"""One-hidden-layer MLP behind the input gate layer, trained with hand-written backprop.

Inputs are feature matrices shaped (batch, d) with values in [0, 1]. Gates
are shared by every row of a minibatch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import analog as _analog
from .adc import AdcConfig, adc_transfer, code_to_input, sar_convert
from .errors import ConfigError, DataError, UsageError
from .gating import (GammaSchedule, GateLayer, anneal_gamma, apply_gates, cost_grad, cost_loss,
                     deterministic_gates, gate_backward, sample_gates, sigmoid)
from .signal import WindowSet, candidate_entries, classifier_inputs

PARAMS = ("W1", "b1", "W2", "b2")
MASKED = ("W1", "W2")
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    gate_lr: float = 1e-2
    epochs: int = 50
    retrain_epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.2
    hidden: int = 100
    warmup_epochs: int = 5

    def __post_init__(self):
        if self.lr <= 0 or self.gate_lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("lr, gate_lr, epochs and batch_size must be positive")
        if self.retrain_epochs < 0 or self.patience < 0 or self.warmup_epochs < 0:
            raise ConfigError("retrain_epochs, patience and warmup_epochs must be non-negative")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")


@dataclass
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    init_snapshot: dict
    mask: dict
    activation: str = "relu"
    version: int = 0

    @property
    def arch(self):
        return {"d": self.W1.shape[0], "H": self.W1.shape[1], "C": self.W2.shape[1],
                "activation": self.activation}

    def params(self):
        return {k: getattr(self, k) for k in PARAMS}

    def set_params(self, params):
        for k in PARAMS:
            setattr(self, k, np.array(params[k], dtype=float))
        self.version += 1

    def copy(self):
        m = MlpModel(*(getattr(self, k).copy() for k in PARAMS), self.init_snapshot,
                     {k: v.copy() for k, v in self.mask.items()}, self.activation)
        return m

    @property
    def num_weights(self):
        return self.W1.size + self.W2.size

    def sparsity(self):
        nz = sum(int(np.count_nonzero(getattr(self, k))) for k in MASKED)
        return 1.0 - nz / self.num_weights


def init_model(d: int, H: int, C: int, seed: int = 0) -> MlpModel:
    if min(d, H, C) < 1:
        raise ConfigError("d, H and C must be at least 1")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / d)
    lim2 = np.sqrt(6.0 / (H + C))
    W1 = rng.uniform(-lim1, lim1, size=(d, H))
    W2 = rng.uniform(-lim2, lim2, size=(H, C))
    b1, b2 = np.zeros(H), np.zeros(C)
    snap = {}
    for k, v in zip(PARAMS, (W1, b1, W2, b2)):
        s = v.copy()
        s.setflags(write=False)
        snap[k] = s
    mask = {"W1": np.ones_like(W1), "W2": np.ones_like(W2)}
    return MlpModel(W1, b1, W2, b2, snap, mask)


@dataclass
class ForwardCache:
    x: np.ndarray
    z: np.ndarray
    xg: np.ndarray
    pre: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    sample: object = None
    version: int = 0


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(model, x, z=None, sample=None):
    """Probabilities for a batch; ``z`` gates the input (default: no gating)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.W1.shape[0]:
        raise UsageError(f"input width {x.shape[1]} does not match d={model.W1.shape[0]}")
    if sample is not None:
        z = sample.z
    z = np.ones(x.shape[1]) if z is None else np.asarray(z, dtype=float)
    xg = apply_gates(x, z)
    pre = xg @ model.W1 + model.b1
    h = np.maximum(pre, 0.0)
    logits = h @ model.W2 + model.b2
    probs = softmax(logits)
    return probs, ForwardCache(x, z, xg, pre, h, logits, probs, sample, getattr(model, "version", 0))


def cross_entropy(probs, labels):
    labels = np.asarray(labels)
    p = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def total_loss(probs, labels, layer: Optional[GateLayer] = None) -> float:
    loss = cross_entropy(probs, labels)
    if layer is not None and layer.lam:
        loss += layer.lam * cost_loss(layer)
    return loss


def backward(model: MlpModel, layer: Optional[GateLayer], cache: ForwardCache, labels, epoch: int = 0):
    """Gradients of ``total_loss`` for W1, b1, W2, b2 and log_alpha."""
    if cache.version != model.version:
        raise UsageError("forward cache is stale: parameters changed since the forward pass")
    labels = np.asarray(labels)
    B = labels.shape[0]
    dlogits = cache.probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    grads = {"W2": cache.h.T @ dlogits, "b2": dlogits.sum(axis=0)}
    dpre = (dlogits @ model.W2.T) * (cache.pre > 0)
    grads["W1"] = cache.xg.T @ dpre
    grads["b1"] = dpre.sum(axis=0)
    for k in MASKED:
        grads[k] = grads[k] * model.mask[k]
    if layer is None or layer.frozen or epoch < layer.warmup_epochs:
        grads["log_alpha"] = np.zeros(0 if layer is None else layer.d)
        return grads
    dz = ((dpre @ model.W1.T) * cache.x).sum(axis=0)
    if cache.sample is not None:
        g = gate_backward(dz, cache.sample, layer, epoch)
    else:
        p = sigmoid(layer.log_alpha)
        g = dz * p * (1.0 - p)
    grads["log_alpha"] = g + layer.lam * cost_grad(layer)
    return grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr, beta1=0.9, beta2=0.999,
              eps=1e-8, masks: Optional[dict] = None):
    """In-place Adam update with bias correction. ``lr`` may be a per-parameter dict."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, g in grads.items():
        if k not in params or g.size == 0:
            continue
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m = state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        step = lr[k] if isinstance(lr, dict) else lr
        params[k] -= step * (m / c1) / (np.sqrt(v / c2) + eps)
        if masks is not None and k in masks:
            params[k] *= masks[k]
    return params


def _batch_gates(layer, rng):
    if layer is None:
        return None, None
    if layer.frozen:
        return layer.frozen_mask, None
    return None, sample_gates(layer, rng)


def _eval_loss(model, layer, X, y):
    z = None if layer is None else deterministic_gates(layer)
    probs, _ = forward(model, X, z)
    return total_loss(probs, y, layer)


def train(model: MlpModel, layer: Optional[GateLayer], X_train, y_train, X_val=None, y_val=None,
          cfg: TrainConfig = None, schedule: Optional[GammaSchedule] = None, epochs: Optional[int] = None,
          on_step: Optional[Callable] = None):
    """Minibatch Adam training with Concrete gate sampling and early stopping.

    Modifies ``model`` and ``layer`` in place and returns ``(model, layer, history)``.
    Early stopping watches the validation loss (deterministic gates) and the
    best-validation parameters are restored at the end. ``on_step(model)`` is
    called after every optimizer step.
    """
    cfg = cfg or TrainConfig()
    epochs = cfg.epochs if epochs is None else epochs
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train)
    if X_train.shape[0] == 0:
        raise DataError("empty training set")
    has_val = X_val is not None and len(X_val) > 0
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    lrs = {"W1": cfg.lr, "b1": cfg.lr, "W2": cfg.lr, "b2": cfg.lr, "log_alpha": cfg.gate_lr}
    history = []
    best = (np.inf, None)
    stale = 0
    n = X_train.shape[0]

    for epoch in range(epochs):
        if layer is not None and not layer.frozen and schedule is not None:
            layer.gamma = anneal_gamma(schedule, min(epoch, schedule.total_epochs - 1))
        order = rng.permutation(n)
        run_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            z, sample = _batch_gates(layer, rng)
            probs, cache = forward(model, X_train[idx], z, sample)
            run_loss += total_loss(probs, y_train[idx], layer) * len(idx)
            grads = backward(model, layer, cache, y_train[idx], epoch)
            params = model.params()
            if layer is not None:
                params["log_alpha"] = layer.log_alpha
            adam_step(params, grads, state, lrs, cfg.beta1, cfg.beta2, cfg.eps, model.mask)
            model.version += 1
            if on_step is not None:
                on_step(model)
        val_loss = _eval_loss(model, layer, X_val, y_val) if has_val else float("nan")
        history.append({
            "epoch": epoch,
            "train_loss": run_loss / n,
            "val_loss": val_loss,
            "gamma": None if layer is None else layer.gamma,
            "expected_cost": None if layer is None else cost_loss(layer),
        })
        if not has_val:
            continue
        if val_loss < best[0]:
            snap = {k: v.copy() for k, v in model.params().items()}
            if layer is not None:
                snap["log_alpha"] = layer.log_alpha.copy()
            best = (val_loss, snap)
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    if best[1] is not None:
        model.set_params(best[1])
        if layer is not None:
            layer.log_alpha = best[1]["log_alpha"]
    return model, layer, history


# --------------------------------------------------------------------------
# quantization

@dataclass
class QuantizedModel:
    q: dict  # integer weight tensors, keys W1/W2
    scale: dict
    b1: np.ndarray
    b2: np.ndarray
    mask: dict
    bits: int = 8
    input_bits: int = 4
    version: int = 0

    @property
    def W1(self):
        return self.q["W1"] * self.scale["W1"]

    @property
    def W2(self):
        return self.q["W2"] * self.scale["W2"]


def quantize_tensor(w, bits=8):
    qmax = (1 << (bits - 1)) - 1
    m = float(np.max(np.abs(w))) if w.size else 0.0
    scale = m / qmax if m > 0 else 1.0
    q = np.clip(np.round(w / scale), -qmax, qmax).astype(np.int64)
    return q, scale


def quantize_weights(model: MlpModel, bits: int = 8, input_bits: int = 4) -> QuantizedModel:
    q, scale = {}, {}
    for k in MASKED:
        q[k], scale[k] = quantize_tensor(getattr(model, k), bits)
    return QuantizedModel(q, scale, model.b1.copy(), model.b2.copy(),
                          {k: v.copy() for k, v in model.mask.items()}, bits, input_bits)


def quantize_input(x01, bits: int = 4):
    """Round-half-up onto the 2**bits uniform levels of [0, 1]."""
    levels = (1 << bits) - 1
    x = np.clip(np.asarray(x01, dtype=float), 0.0, 1.0)
    out = np.floor(x * levels + 0.5) / levels
    return float(out) if out.ndim == 0 else out


def ideal_inputs(ws: WindowSet, entries, analog_cfg=None, adc_cfg=None):
    """Software features passed through the ADC's transfer curve (no analog error)."""
    analog_cfg = analog_cfg or _analog.AnalogConfig()
    adc_cfg = adc_cfg or AdcConfig()
    return adc_transfer(classifier_inputs(ws, entries), analog_cfg, adc_cfg)


def analog_inputs(ws: WindowSet, entries, selected, analog_cfg=None, adc_cfg=None):
    """Classifier inputs produced by the extractor circuits and the SAR ADC.

    Columns of unselected features are zero.
    """
    analog_cfg = analog_cfg or _analog.AnalogConfig()
    adc_cfg = adc_cfg or AdcConfig()
    X = np.zeros((len(ws), len(entries)))
    sel = [e for e, on in zip(entries, selected) if on]
    if not sel or len(ws) == 0:
        return X
    keys, volts, _ = _analog.extractor_bank(ws, sel, analog_cfg)
    codes = sar_convert(_analog.adc_input_voltages(keys, volts, analog_cfg), adc_cfg)
    col = {e: j for j, e in enumerate(map(tuple, entries))}
    for j, key in enumerate(keys):
        X[:, col[key]] = code_to_input(codes[:, j], adc_cfg)
    return X


def predict(model, X, z=None):
    probs, _ = forward(model, X, z)
    return probs.argmax(axis=1)


def evaluate(model, layer: GateLayer, windows: WindowSet, path: str = "ideal", analog_cfg=None,
             adc_cfg=None, entries=None):
    """Accuracy and predictions on normalized windows through a frozen gate layer.

    ``path="ideal"`` uses software features and the ADC transfer curve;
    ``path="analog"`` routes every window through the extractor bank and the ADC.
    """
    if not layer.frozen:
        raise UsageError("evaluate needs a frozen gate layer (call prune_gates first)")
    entries = entries or candidate_entries(windows.channels)
    z = deterministic_gates(layer)
    if path == "ideal":
        X = ideal_inputs(windows, entries, analog_cfg, adc_cfg)
    elif path == "analog":
        X = analog_inputs(windows, entries, z > 0, analog_cfg, adc_cfg)
    else:
        raise UsageError(f"unknown feature path {path!r}")
    if len(windows) == 0:
        return float("nan"), np.zeros(0, dtype=np.int64)
    preds = predict(model, X, z)
    return float(np.mean(preds == windows.labels)), preds


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, model: MlpModel, layer: GateLayer, qmodel: Optional[QuantizedModel] = None,
                    meta: Optional[dict] = None):
    """Write an ``.npz`` checkpoint; see the README for the key layout."""
    arrays = {f"param/{k}": getattr(model, k) for k in PARAMS}
    arrays.update({f"init/{k}": model.init_snapshot[k] for k in PARAMS})
    arrays.update({f"mask/{k}": model.mask[k] for k in MASKED})
    arrays["gate/log_alpha"] = layer.log_alpha
    arrays["gate/costs"] = layer.costs
    if layer.frozen_mask is not None:
        arrays["gate/frozen_mask"] = layer.frozen_mask
    if qmodel is not None:
        for k in MASKED:
            arrays[f"quant/{k}"] = qmodel.q[k]
            arrays[f"quant/scale_{k}"] = np.array(qmodel.scale[k])
    header = {
        "format_version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "gate": {"gamma": layer.gamma, "lambda": layer.lam, "warmup_epochs": layer.warmup_epochs},
        "quant": None if qmodel is None else {"bits": qmodel.bits, "input_bits": qmodel.input_bits},
        "meta": meta or {},
    }
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(model, layer, qmodel_or_None, header)``."""
    with np.load(path, allow_pickle=False) as f:
        header = json.loads(str(f["header"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
        p = {k: f[f"param/{k}"] for k in PARAMS}
        snap = {}
        for k in PARAMS:
            s = f[f"init/{k}"].copy()
            s.setflags(write=False)
            snap[k] = s
        mask = {k: f[f"mask/{k}"] for k in MASKED}
        model = MlpModel(p["W1"], p["b1"], p["W2"], p["b2"], snap, mask, header["arch"]["activation"])
        g = header["gate"]
        layer = GateLayer(f["gate/log_alpha"], f["gate/costs"], g["gamma"], g["lambda"], g["warmup_epochs"],
                          f["gate/frozen_mask"] if "gate/frozen_mask" in f.files else None)
        qmodel = None
        if header["quant"] is not None:
            qmodel = QuantizedModel({k: f[f"quant/{k}"] for k in MASKED},
                                    {k: float(f[f"quant/scale_{k}"]) for k in MASKED},
                                    model.b1.copy(), model.b2.copy(), mask,
                                    header["quant"]["bits"], header["quant"]["input_bits"])
    return model, layer, qmodel, header
