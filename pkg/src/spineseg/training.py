"""Losses, optimizer, Dice metric, k-fold splitting, and the training loop.

The loss is the unweighted sum of soft Dice (foreground classes) and voxel
cross-entropy; optimization is SGD with classic momentum and polynomial
learning-rate decay.  The loop is deterministic given a seed, and its RNG
and velocity state can be exported and restored so a resumed run reproduces
the uninterrupted one exactly.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .network import SegNetwork, forward
from .phantom import VolumeSample
from .tensor import (Tape, Tensor, add, mul, reciprocal, reshape, slice_axis,
                     sub, texp, tlog, tmean, tsum)


def _one_hot(labels: np.ndarray, n_classes: int, dtype) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError(
            f"labels must lie in 0..{n_classes - 1}, got "
            f"[{labels.min()}, {labels.max()}]")
    eye = np.eye(n_classes, dtype=dtype)
    flat = eye[labels.reshape(-1)]
    onehot = flat.reshape(labels.shape + (n_classes,))
    return np.moveaxis(onehot, -1, 1)


def _log_softmax(logits: Tensor) -> tuple[Tensor, Tensor]:
    """Stable (log p, p) over the class axis; the max shift is a constant."""
    m = logits.data.max(axis=1, keepdims=True)
    shifted = sub(logits, m)
    e = texp(shifted)
    s = tsum(e, axis=1, keepdims=True)
    logp = sub(shifted, tlog(s))
    p = mul(e, reciprocal(s))
    return logp, p


def softmax_probs(logits: Tensor) -> Tensor:
    return _log_softmax(logits)[1]


def dice_loss(logits: Tensor, labels: np.ndarray, eps: float = 1e-5) -> Tensor:
    """1 - mean soft Dice over foreground classes.

    Soft Dice per class c is (2 sum p_c g_c + eps) / (sum p_c + sum g_c + eps)
    with p = softmax(logits) and g the one-hot ground truth; background
    (class 0) is excluded from the mean.
    """
    n_classes = logits.shape[1]
    onehot = _one_hot(labels, n_classes, logits.dtype)
    p = softmax_probs(logits)
    axes = (0,) + tuple(range(2, logits.ndim))
    inter = tsum(mul(p, onehot), axis=axes)
    psum = tsum(p, axis=axes)
    gsum = onehot.sum(axis=axes)
    dice = mul(add(mul(inter, 2.0), eps),
               reciprocal(add(add(psum, gsum), eps)))
    fg = slice_axis(dice, 0, 1, n_classes)
    return sub(1.0, tmean(fg))


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over voxels of -log softmax(logits)[label], max-shifted."""
    n_classes = logits.shape[1]
    onehot = _one_hot(labels, n_classes, logits.dtype)
    logp, _ = _log_softmax(logits)
    n_voxels = labels.size
    return mul(tsum(mul(onehot, logp)), -1.0 / n_voxels)


def combined_loss(logits: Tensor, labels: np.ndarray,
                  eps: float = 1e-5) -> Tensor:
    """Unweighted sum: dice_loss + cross_entropy_loss."""
    return add(dice_loss(logits, labels, eps), cross_entropy_loss(logits, labels))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def sgd_step(params, grads, lr: float, momentum: float,
             velocity: list[np.ndarray] | None = None) -> list[np.ndarray]:
    """Classic momentum: v <- momentum*v + g; p <- p - lr*v.

    Parameter data is rebound (never mutated in place) so recorded tapes
    stay valid.  Returns the updated velocity state.
    """
    params = list(params)
    grads = list(grads)
    if velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    if not (len(params) == len(grads) == len(velocity)):
        raise UsageError("params, grads and velocity lengths disagree")
    out = []
    for p, g, v in zip(params, grads, velocity):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise UsageError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        v_new = momentum * v + g
        p.data = p.data - p.data.dtype.type(lr) * v_new
        out.append(v_new)
    return out


def poly_lr(base_lr: float, epoch: int, total_epochs: int,
            power: float = 0.9) -> float:
    frac = min(epoch, total_epochs - 1) / max(1, total_epochs)
    return base_lr * (1.0 - frac) ** power


def clip_grad_norm(grads, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.vdot(g, g))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for i, g in enumerate(grads):
            if g is not None:
                grads[i] = g * scale
    return norm


# ---------------------------------------------------------------------------
# metrics and splits
# ---------------------------------------------------------------------------


def dice_metric(pred: np.ndarray, true: np.ndarray, label: int) -> float:
    """Hard Dice 2|P∩G| / (|P|+|G|) for one label; both empty -> 1.0."""
    p = pred == label
    g = true == label
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def dice_scores(pred: np.ndarray, true: np.ndarray, n_classes: int) -> np.ndarray:
    return np.array([dice_metric(pred, true, c) for c in range(n_classes)])


def kfold_split(ids, k: int, fold_index: int, seed: int):
    """Deterministic shuffle, then round-robin folds; sizes differ by <= 1."""
    ids = list(ids)
    if not 0 <= fold_index < k:
        raise ConfigError(f"fold_index {fold_index} not in 0..{k - 1}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    test = shuffled[fold_index::k]
    test_set = set(test)
    train = [i for i in shuffled if i not in test_set]
    return train, test


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 2
    learning_rate: float = 0.01
    momentum: float = 0.99
    seed: int = 0
    fold_count: int = 5
    fold_index: int = 0
    steps_per_epoch: int | None = None
    lr_power: float = 0.9
    clip_norm: float | None = 12.0
    dice_eps: float = 1e-5
    variant: str = "bot"
    vsp: bool = False
    eval_every: int = 1
    early_stop_dice: float | None = None

    def validate(self) -> None:
        if self.fold_index >= self.fold_count or self.fold_index < 0:
            raise ConfigError(
                f"fold_index {self.fold_index} must be < fold_count {self.fold_count}")
        for name in ("learning_rate", "momentum"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.learning_rate == 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class TrainState:
    """Everything needed to resume a run exactly where it stopped."""

    epoch: int = 0
    velocity: list | None = None
    rng_state: dict | None = None
    history: list = field(default_factory=list)


def _batch(samples: list[VolumeSample], ids, dtype):
    x = np.stack([samples[i].image for i in ids]).astype(dtype)
    y = np.stack([samples[i].labels for i in ids])
    return x, y


def predict_labels(net: SegNetwork, image: np.ndarray) -> np.ndarray:
    """Argmax class map for a single (1, H, W, L) image."""
    logits = forward(net, Tensor(image[None]))
    return np.argmax(logits.data[0], axis=0).astype(np.int32)


def evaluate(net: SegNetwork, samples: list[VolumeSample], ids=None) -> dict:
    """Per-class and mean foreground Dice over the given sample ids."""
    ids = range(len(samples)) if ids is None else ids
    n = net.cfg.n_classes
    scores = []
    for i in ids:
        pred = predict_labels(net, samples[i].image)
        scores.append(dice_scores(pred, samples[i].labels, n))
    per_class = np.mean(scores, axis=0)
    return {
        "per_class_dice": per_class.tolist(),
        "mean_dice": float(per_class.mean()),
        "mean_foreground_dice": float(per_class[1:].mean()),
        "n_samples": len(scores),
    }


def _write_metrics(path: str, history: list[dict]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        for rec in history:
            f.write(json.dumps(rec) + "\n")
    os.replace(tmp, path)


def train_network(net: SegNetwork, samples: list[VolumeSample], train_ids,
                  cfg: TrainConfig, val_ids=None, metrics_path: str | None = None,
                  state: TrainState | None = None,
                  until_epoch: int | None = None) -> TrainState:
    """Run (or resume) the training loop; returns the final state.

    The loss sequence is a pure function of (network params, samples,
    train_ids order, cfg, state), so two runs from the same seed are
    identical, and save -> resume reproduces the uninterrupted run.
    ``until_epoch`` interrupts the run early without altering the schedule.
    """
    cfg.validate()
    train_ids = list(train_ids)
    state = state or TrainState()
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state
    named = list(net.named_parameters())
    params = [t for _, t in named]
    velocity = state.velocity
    dtype = net.cfg.np_dtype
    steps = cfg.steps_per_epoch or math.ceil(len(train_ids) / cfg.batch_size)
    last_epoch = cfg.epochs if until_epoch is None else min(cfg.epochs, until_epoch)

    for epoch in range(state.epoch, last_epoch):
        t0 = time.perf_counter()
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        lr = poly_lr(cfg.learning_rate, epoch, cfg.epochs, cfg.lr_power)
        losses = []
        for step in range(steps):
            lo = (step * cfg.batch_size) % len(order)
            ids = order[lo:lo + cfg.batch_size]
            if len(ids) < cfg.batch_size:
                ids = ids + order[: cfg.batch_size - len(ids)]
            x, y = _batch(samples, ids, dtype)
            for t in params:
                t.grad = None
            with Tape() as tape:
                logits = forward(net, Tensor(x))
                loss = combined_loss(logits, y, cfg.dice_eps)
            tape.backward(loss)
            grads = [t.grad for t in params]
            if cfg.clip_norm is not None:
                clip_grad_norm(grads, cfg.clip_norm)
            velocity = sgd_step(params, grads, lr, cfg.momentum, velocity)
            losses.append(loss.item())
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "lr": lr,
        }
        if val_ids is not None and (epoch + 1) % cfg.eval_every == 0:
            ev = evaluate(net, samples, val_ids)
            record["per_class_dice"] = ev["per_class_dice"]
            record["mean_dice"] = ev["mean_dice"]
            record["mean_foreground_dice"] = ev["mean_foreground_dice"]
        record["wall_s"] = time.perf_counter() - t0
        state.history.append(record)
        state.epoch = epoch + 1
        state.velocity = velocity
        state.rng_state = rng.bit_generator.state
        if metrics_path:
            _write_metrics(metrics_path, state.history)
        if (cfg.early_stop_dice is not None
                and record.get("mean_foreground_dice", 0.0) >= cfg.early_stop_dice):
            break
    return state
