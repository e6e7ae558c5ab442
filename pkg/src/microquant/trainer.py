"""Backpropagation, Adam, plateau LR schedule and checkpointed training."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netgraph import (Conv2D, Dense, Flatten, MaxPool2D, ModelSpec, ShapeError,
                       apply_layer, im2col, pad_same, softmax, _same_pads)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    batch_size: int = 32
    epochs: int = 40
    plateau_factor: float = 0.2
    plateau_patience: int = 5
    val_split: float = 0.1
    seed: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, classes), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy_loss(probs, labels) -> float:
    """Mean categorical cross-entropy; ``labels`` must be one-hot rows."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if probs.shape != labels.shape:
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} differ")
    if not (np.isin(labels, (0.0, 1.0)).all() and (labels.sum(axis=1) == 1).all()):
        raise ValueError("labels must be one-hot rows")
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-4:
        raise ValueError("probability rows must sum to 1")
    picked = np.maximum((probs * labels).sum(axis=1), PROB_FLOOR)
    return float(np.mean(-np.log(picked)))


# --- backward ------------------------------------------------------------------

def _forward_cached(spec: ModelSpec, x: np.ndarray):
    cache = []
    for layer, w in zip(spec.layers, spec.weights):
        z = apply_layer(layer, w, x, pre_activation=True)
        if isinstance(layer, (Conv2D, Dense)) and layer.activation == "relu":
            y = np.maximum(z, 0)
        elif isinstance(layer, Dense) and layer.activation == "softmax":
            y = softmax(z)
        else:
            y = z
        cache.append((x, z))
        x = y
    return x, cache


def _conv_backward(layer: Conv2D, kernel, x, dz):
    k, s = layer.kernel, layer.stride
    xp = pad_same(x, k, s) if layer.padding == "same" else x
    cols = im2col(xp, k, s)
    n, oh, ow, _ = dz.shape
    dz2 = dz.reshape(-1, layer.out_channels)
    dkernel = (cols.reshape(-1, cols.shape[-1]).T @ dz2).reshape(kernel.shape)
    dbias = dz2.sum(axis=0)
    dcols = (dz2 @ kernel.reshape(-1, layer.out_channels).T).reshape(n, oh, ow, k, k, -1)
    dxp = np.zeros_like(xp)
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky:ky + s * oh:s, kx:kx + s * ow:s, :] += dcols[:, :, :, ky, kx, :]
    if layer.padding == "same":
        top, _ = _same_pads(x.shape[1], k, s)
        left, _ = _same_pads(x.shape[2], k, s)
        dxp = dxp[:, top:top + x.shape[1], left:left + x.shape[2], :]
    return dxp, dkernel, dbias


def _pool_backward(layer: MaxPool2D, x, out, dy):
    p, s = layer.pool, layer.stride
    _, oh, ow, _ = out.shape
    dx = np.zeros_like(x)
    taken = np.zeros(out.shape, dtype=bool)
    for py in range(p):
        for px in range(p):
            window = x[:, py:py + s * oh:s, px:px + s * ow:s, :]
            hit = (window == out) & ~taken  # first maximum wins
            dx[:, py:py + s * oh:s, px:px + s * ow:s, :] += np.where(hit, dy, 0)
            taken |= hit
    return dx


def backward(spec: ModelSpec, batch, labels):
    """Gradients of the mean cross-entropy loss w.r.t. every weight tensor.

    Returns ``(loss, grads)`` where ``grads`` mirrors ``spec.weights``.
    The final layer must be a softmax Dense; its gradient is fused as
    ``(p - y) / batch``.
    """
    last = spec.layers[-1] if spec.layers else None
    if not (isinstance(last, Dense) and last.activation == "softmax"):
        raise ValueError("training needs a final Dense layer with softmax activation")
    x = np.asarray(batch)
    if x.ndim == 3:
        x = x[None]
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(f"batch shape {x.shape[1:]} != model input {spec.input_shape}")
    y = np.asarray(labels, dtype=x.dtype)
    if y.ndim == 1 and y.shape[0] != last.out_features:
        y = one_hot(y, last.out_features).astype(x.dtype)
    y = np.atleast_2d(y)
    if y.shape != (x.shape[0], last.out_features):
        raise ShapeError(f"labels shape {y.shape} != ({x.shape[0]}, {last.out_features})")

    probs, cache = _forward_cached(spec, x)
    loss = cross_entropy_loss(probs, y)
    grads = _backprop(spec, cache, probs, y)
    return loss, grads


def _backprop(spec: ModelSpec, cache, probs, y):
    x = cache[0][0]
    grads: list = [None] * len(spec.layers)
    d = (probs - y) / x.shape[0]  # gradient w.r.t. final logits
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, w = spec.layers[i], spec.weights[i]
        inp, z = cache[i]
        if isinstance(layer, (Conv2D, Dense)) and layer.activation == "relu":
            d = d * (z > 0)
        if isinstance(layer, Dense):
            grads[i] = (inp.T @ d, d.sum(axis=0))
            d = d @ w[0].T
        elif isinstance(layer, Conv2D):
            d, dk, db = _conv_backward(layer, w[0], inp, d)
            grads[i] = (dk, db)
        elif isinstance(layer, MaxPool2D):
            d = _pool_backward(layer, inp, z, d)
        elif isinstance(layer, Flatten):
            d = d.reshape(inp.shape)
    return grads


# --- optimizer / schedule ----------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, tensors) -> "AdamState":
        return cls([np.zeros_like(t) for t in tensors], [np.zeros_like(t) for t in tensors])


def adam_step(weights, grads, state: AdamState, cfg: TrainConfig, lr: float | None = None):
    """One bias-corrected Adam update over flat lists of tensors."""
    if len(weights) != len(grads) or len(weights) != len(state.m):
        raise ShapeError("weights, grads and optimizer state lengths differ")
    lr = cfg.learning_rate if lr is None else lr
    t = state.t + 1
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(weights, grads, state.m, state.v):
        if w.shape != g.shape:
            raise ShapeError(f"weight {w.shape} and gradient {g.shape} differ")
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        new_w.append((w - step).astype(w.dtype))
        new_m.append(m.astype(w.dtype))
        new_v.append(v.astype(w.dtype))
    return new_w, AdamState(new_m, new_v, t)


class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` epochs without a new best."""

    def __init__(self, lr: float, factor: float = 0.2, patience: int = 5):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = -math.inf
        self.wait = 0

    def step(self, value: float) -> float:
        if value > self.best:
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        return self.lr


def reduce_lr_on_plateau(history, cfg: TrainConfig) -> float:
    """Learning rate in force after replaying a validation-accuracy history."""
    sched = PlateauScheduler(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience)
    for value in history:
        sched.step(value)
    return sched.lr


# --- fit ---------------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: float
    val_loss: float
    learning_rate: float


@dataclass
class FitResult:
    model: ModelSpec
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0


def _unflatten(spec: ModelSpec, flat):
    it = iter(flat)
    return [None if w is None else (next(it), next(it)) for w in spec.weights]


def predict_proba(spec: ModelSpec, x, batch_size: int = 256) -> np.ndarray:
    from .netgraph import forward
    return np.concatenate([forward(spec, x[i:i + batch_size])
                           for i in range(0, len(x), batch_size)])


def _score(spec, x, y):
    if len(x) == 0:
        return math.nan, math.nan
    probs = predict_proba(spec, x)
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    loss = cross_entropy_loss(probs / probs.sum(axis=1, keepdims=True),
                              one_hot(y, probs.shape[1]))
    return acc, loss


def fit(spec: ModelSpec, train, val=None, cfg: TrainConfig | None = None) -> FitResult:
    """Train with mini-batch Adam, plateau LR decay and best-weight checkpointing.

    ``train`` and ``val`` are ``(x, labels)`` pairs with x in NHWC float32.
    ``val=None`` carves ``cfg.val_split`` off the training set; an explicitly
    empty validation set makes the checkpoint monitor training accuracy.
    """
    cfg = cfg or TrainConfig()
    x, y = np.asarray(train[0], dtype=np.float32), np.asarray(train[1], dtype=np.int64)
    if len(x) == 0:
        raise ValueError("training set is empty")
    if not spec.weights:
        raise ValueError("model has no weights attached; call init_weights first")
    rng = np.random.default_rng(cfg.seed)
    if val is None and cfg.val_split > 0 and len(x) > 1:
        order = rng.permutation(len(x))
        n_val = max(1, int(round(len(x) * cfg.val_split)))
        val = (x[order[:n_val]], y[order[:n_val]])
        x, y = x[order[n_val:]], y[order[n_val:]]
    if val is None:
        vx, vy = x[:0], y[:0]
    else:
        vx, vy = np.asarray(val[0], dtype=np.float32), np.asarray(val[1], dtype=np.int64)
    classes = spec.layers[-1].out_features

    params = [t.copy() for t in spec.tensors()]
    state = AdamState.zeros_like(params)
    sched = PlateauScheduler(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience)
    model = spec.with_weights(_unflatten(spec, params))
    result = FitResult(model=model)
    best = -math.inf

    for epoch in range(1, cfg.epochs + 1):
        lr = sched.lr
        order = rng.permutation(len(x))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], one_hot(y[idx], classes)
            probs, cache = _forward_cached(model, xb)
            loss_sum += cross_entropy_loss(probs, yb) * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
            grads = _backprop(model, cache, probs, yb)
            flat = [g for pair in grads if pair is not None for g in pair]
            params, state = adam_step(params, flat, state, cfg, lr=lr)
            model = spec.with_weights(_unflatten(spec, params))

        train_acc = correct / len(x)
        val_acc, val_loss = _score(model, vx, vy)
        monitored = train_acc if len(vx) == 0 else val_acc
        result.history.append(EpochRecord(epoch, loss_sum / len(x), train_acc,
                                          val_acc, val_loss, lr))
        log.info("epoch %d loss %.4f acc %.4f val_acc %.4f lr %.2e",
                 epoch, loss_sum / len(x), train_acc, val_acc, lr)
        if monitored > best:
            best = monitored
            result.model = model
            result.best_epoch = epoch
            result.best_val_accuracy = monitored
            if cfg.checkpoint_path:
                save_checkpoint(cfg.checkpoint_path, model, epoch, monitored, lr)
        sched.step(monitored)
    return result


def save_checkpoint(path, model: ModelSpec, epoch: int, accuracy: float, lr: float) -> None:
    """Write the model file plus a JSON sidecar (``<path>.json``)."""
    from .io import save_model
    save_model(path, model)
    sidecar = {"epoch": epoch, "val_accuracy": accuracy, "learning_rate": lr}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))
