"""Class-weighted cross-entropy, L1 spline sparsity and the training loop."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import ClassDistribution, WindowSet, class_distribution
from .errors import (
    ClassWeightError,
    ConfigError,
    DivergenceError,
    LabelError,
    NonFiniteError,
    NonFiniteGradientError,
    ShapeError,
)
from .evaluation import macro_f1
from .numerics import make_rng

WEIGHT_MODES = ("inverse_frequency", "uniform", "explicit")


@dataclass
class ClassWeights:
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (3,) or np.any(self.w <= 0):
            raise ClassWeightError("class weights must be three positive numbers")


def inverse_freq_weights(dist: ClassDistribution) -> ClassWeights:
    """``w_c = N / (3 n_c)``."""
    counts = np.asarray(dist.counts, dtype=np.float64)
    if np.any(counts <= 0):
        empty = [int(c) for c in np.flatnonzero(counts <= 0)]
        raise ClassWeightError(f"class(es) {empty} have no samples; use uniform weights instead")
    return ClassWeights(counts.sum() / (3.0 * counts))


def uniform_weights() -> ClassWeights:
    return ClassWeights(np.ones(3))


def weighted_ce(logits, labels, weights: ClassWeights | None = None):
    """Mean weighted cross-entropy over the batch and its gradient w.r.t. logits.

    The loss is ``-(1/B) sum_i w_{y_i} log softmax(logits_i)[y_i]``; the
    normaliser is the batch size, not the sum of weights.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    if z.shape[1] != 3 or y.shape != (z.shape[0],):
        raise ShapeError(f"logits {z.shape} and labels {y.shape} do not conform")
    if not np.all(np.isin(y, (0, 1, 2))):
        raise LabelError("labels must be in {0, 1, 2}")
    y = y.astype(np.int64)
    w = (weights or uniform_weights()).w
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - logsumexp[:, None]
    B = z.shape[0]
    wy = w[y]
    loss = float(-(wy * log_p[np.arange(B), y]).sum() / B)
    grad = np.exp(log_p)
    grad[np.arange(B), y] -= 1.0
    grad *= (wy / B)[:, None]
    return loss, grad


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def sgd_adaptive_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """Bias-corrected adaptive-moment update, applied in place to ``params``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    offset = 0
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        bad = ~np.isfinite(g)
        if bad.any():
            idx = offset + int(np.flatnonzero(bad.ravel())[0])
            raise NonFiniteGradientError(f"non-finite gradient at flat parameter index {idx}", index=idx)
        offset += p.size
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 5
    lam: float = 1e-4
    seed: int = 0
    horizon: int = 100
    class_weight_mode: str = "inverse_frequency"
    explicit_weights: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch_size and max_epochs must be >= 1, patience >= 0")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.class_weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"class_weight_mode must be one of {WEIGHT_MODES}")
        if self.class_weight_mode == "explicit" and self.explicit_weights is None:
            raise ConfigError("explicit class weights requested but none given")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(value: str, typ):
    if typ in ("int",):
        return int(value)
    if typ in ("float",):
        return float(value)
    if "tuple" in str(typ):
        parts = [p for p in value.replace(",", " ").split() if p]
        return tuple(float(p) for p in parts) if parts and parts[0].lower() != "none" else None
    return value


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def train_config_from_mapping(values: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    current = (base or TrainConfig()).to_dict()
    types = {f.name: f.type for f in fields(TrainConfig)}
    aliases = {"lambda": "lam", "batch": "batch_size", "epochs": "max_epochs", "k": "horizon"}
    for key, raw in values.items():
        name = aliases.get(key, key)
        if name not in types:
            raise ConfigError(f"unknown training key {key!r}")
        try:
            current[name] = _coerce(raw, types[name]) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return TrainConfig(**current)


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    valid_f1: list[float] = field(default_factory=list)
    best_epoch: int = -1
    wall_clock: float = 0.0

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "valid_loss", "valid_f1"])
            for row in zip(self.epochs, self.train_loss, self.valid_loss, self.valid_f1):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return path


def class_weights_for(cfg: TrainConfig, train: WindowSet) -> ClassWeights:
    if cfg.class_weight_mode == "uniform":
        return uniform_weights()
    if cfg.class_weight_mode == "explicit":
        return ClassWeights(cfg.explicit_weights)
    return inverse_freq_weights(class_distribution(train, cfg.horizon))


def objective_and_grads(model, X, y, weights: ClassWeights, lam: float):
    """CE + lambda * L1 on one batch; gradients in registry order."""
    logits = model.forward(X)
    loss, dlogits = weighted_ce(logits, y, weights)
    grads = model.backward_arrays(dlogits)
    if lam:
        loss += lam * model.l1_penalty()
        grads = [g + lam * s for g, s in zip(grads, model.l1_subgradient())]
    return loss, grads


def evaluate_loss(model, windows: WindowSet, k: int, weights: ClassWeights, batch_size: int = 512):
    y = windows.label(k)
    total, preds = 0.0, []
    for s in range(0, len(windows), batch_size):
        logits = model.forward(windows.X[s:s + batch_size])
        loss, _ = weighted_ce(logits, y[s:s + batch_size], weights)
        total += loss * logits.shape[0]
        preds.append(logits.argmax(axis=1))
    model._cache = None
    return total / len(windows), macro_f1(y, np.concatenate(preds))


def train(model, train_set: WindowSet, valid_set: WindowSet, cfg: TrainConfig, log=None):
    """Mini-batch adaptive-moment training with early stopping on validation macro F1.

    The model is left holding the best-validation parameters and returned
    together with the :class:`TrainReport`.
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ConfigError("training and validation splits must be non-empty")
    for name, split in (("training", train_set), ("validation", valid_set)):
        if not np.all(np.isfinite(split.X)):
            raise NonFiniteError(f"{name} windows contain non-finite values")
    k = cfg.horizon
    y_train = train_set.label(k)
    valid_set.label(k)
    weights = class_weights_for(cfg, train_set)
    params = [a for _, a in model.parameters()]
    state = AdamState()
    report = TrainReport()
    best_f1, best_flat, bad = -np.inf, model.get_flat(), 0
    start = time.perf_counter()
    n = len(train_set)
    for epoch in range(1, cfg.max_epochs + 1):
        order = make_rng(cfg.seed, "shuffle", epoch).permutation(n)
        losses = []
        for step, s in enumerate(range(0, n, cfg.batch_size)):
            idx = np.sort(order[s:s + cfg.batch_size])
            try:
                loss, grads = objective_and_grads(model, train_set.X[idx], y_train[idx], weights, cfg.lam)
            except NonFiniteError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, step {step}", epoch, step) from exc
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}, step {step}", epoch, step)
            try:
                sgd_adaptive_step(params, grads, state, cfg.lr)
            except NonFiniteGradientError as exc:
                raise DivergenceError(f"{exc} (epoch {epoch}, step {step})", epoch, step) from exc
            losses.append(loss)
        v_loss, v_f1 = evaluate_loss(model, valid_set, k, weights)
        if not np.isfinite(v_loss):
            raise DivergenceError(f"validation loss non-finite at epoch {epoch}", epoch, None)
        report.epochs.append(epoch)
        report.train_loss.append(float(np.mean(losses)))
        report.valid_loss.append(float(v_loss))
        report.valid_f1.append(float(v_f1))
        if log:
            log(f"epoch {epoch:3d}  train {report.train_loss[-1]:.5f}  valid {v_loss:.5f}  f1 {v_f1:.4f}")
        if v_f1 > best_f1:
            best_f1, best_flat, bad = v_f1, model.get_flat(), 0
            report.best_epoch = epoch
        else:
            bad += 1
            if bad > cfg.patience:
                break
    model.set_flat(best_flat)
    report.wall_clock = time.perf_counter() - start
    return model, report
