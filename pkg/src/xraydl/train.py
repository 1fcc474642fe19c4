"""Adam updates and the fit loop with its epoch-end callbacks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import ops
from .errors import DivergenceError, NumericError, ParameterError, UsageError
from .metrics import evaluate_model
from .models import ModelSpec, ParamStore, forward_model, predict_classes
from .persist import Checkpoint, save_checkpoint
from .rng import Rng

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict, state: AdamState) -> tuple:
    """One Adam update of every trainable parameter; frozen entries are untouched.

    Parameter arrays are replaced, not written in place.
    """
    trainable = set(params.trainable_names())
    if set(grads) != trainable:
        missing = sorted(trainable - set(grads))
        extra = sorted(set(grads) - trainable)
        raise UsageError(f"gradient keys do not match trainable parameters; missing {missing}, extra {extra}")
    state.t += 1
    b1, b2, t = state.beta1, state.beta2, state.t
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name in params.trainable_names():
        theta = params[name]
        g = np.asarray(grads[name], dtype=theta.dtype)
        if g.shape != theta.shape:
            raise UsageError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        m_hat = m / bc1
        v_hat = v / bc2
        params.set(name, (theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(theta.dtype))
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    early_stop_patience: int = 5
    lr_factor: float = 0.1
    lr_patience: int = 3
    min_lr: float = 1e-6
    seed: int = 0
    restore_best: bool = True

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ParameterError("max_epochs and batch_size must be >= 1")
        if self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ParameterError("patience values must be >= 1")
        if not 0 < self.lr_factor < 1:
            raise ParameterError(f"plateau factor must lie in (0, 1), got {self.lr_factor}")
        if self.learning_rate <= 0 or self.min_lr < 0:
            raise ParameterError("learning rate must be positive and min_lr non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


def run_epoch(spec: ModelSpec, params: ParamStore, adam: AdamState, batches: Iterable, rng: Rng) -> tuple:
    """Train over ``batches`` once; returns sample-weighted (mean loss, accuracy)."""
    total_loss, correct, n, count = 0.0, 0, 0, 0
    for index, (images, labels) in enumerate(batches):
        try:
            out, tape = forward_model(spec, params, images, "train", rng)
            loss = ops.categorical_cross_entropy(out, labels.astype(out.dtype))
        except NumericError as exc:
            raise DivergenceError(f"batch {index}: {exc}") from exc
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(f"batch {index}: non-finite loss {value}")
        grads = tape.backward(loss)
        adam_step(params, grads, adam)
        b = len(labels)
        total_loss += value * b
        correct += sum(int(p == t) for p, t in zip(predict_classes(out), np.argmax(labels, axis=1)))
        n += b
        count += 1
    if count == 0:
        raise UsageError("run_epoch needs at least one batch")
    return total_loss / n, correct / n


def early_stopping_update(history: Sequence[float], patience: int) -> tuple:
    """("stop" | "continue", best 1-based epoch).

    Stops when the last ``patience`` values all fail to strictly improve on the
    best value seen before them. The best epoch is the earliest minimum.
    """
    if not history:
        raise UsageError("early stopping needs at least one monitored value")
    best_epoch = int(np.argmin(history)) + 1
    if len(history) <= patience:
        return "continue", best_epoch
    before = min(history[:-patience])
    stop = all(not (v < before) for v in history[-patience:])
    return ("stop" if stop else "continue"), best_epoch


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without strict improvement."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 3, min_lr: float = 1e-6):
        self.lr, self.factor, self.patience, self.min_lr = lr, factor, patience, min_lr
        self.best = math.inf
        self.wait = 0

    def update(self, value: float) -> float:
        if value < self.best:
            self.best, self.wait = value, 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                new = max(self.lr * self.factor, self.min_lr)
                if new < self.lr:
                    log.info("reducing learning rate %g -> %g", self.lr, new)
                self.lr, self.wait = new, 0
        return self.lr


class FitResult(NamedTuple):
    params: ParamStore
    history: list
    best_checkpoint: Optional[str]


BatchSource = Union[Sequence, Callable[[int], Iterable]]


def _epoch_batches(source: BatchSource, epoch: int) -> Iterable:
    return source(epoch) if callable(source) else source


def fit(spec: ModelSpec, params: ParamStore, train_batches: BatchSource, valid_batches: BatchSource,
        config: TrainConfig, sinks: Sequence[Callable[[EpochRecord], None]] = (),
        checkpoint_path=None, class_names: Optional[Sequence[str]] = None,
        metadata: Optional[dict] = None,
        validate: Optional[Callable[[ModelSpec, ParamStore, int], tuple]] = None) -> FitResult:
    """Train with Adam, evaluating on the validation batches after every epoch.

    Batch sources are sequences reused each epoch or callables ``epoch -> batches``.
    ``validate(spec, params, epoch) -> (loss, accuracy)`` replaces the default
    infer-mode evaluation when given. ``params`` is updated in place.
    """
    rng = Rng(config.seed)
    adam = AdamState(learning_rate=config.learning_rate)
    plateau = PlateauScheduler(config.learning_rate, config.lr_factor, config.lr_patience, config.min_lr)
    history: list = []
    val_losses: list = []
    best_loss, best_params = math.inf, None
    best_path = None

    def default_validate(spec_, params_, epoch):
        batches = _epoch_batches(valid_batches, epoch)
        loss, acc, _, _ = evaluate_model(spec_, params_, batches)
        return loss, acc

    validate = validate or default_validate
    for epoch in range(1, config.max_epochs + 1):
        lr = plateau.lr
        adam.learning_rate = lr
        try:
            train_loss, train_acc = run_epoch(spec, params, adam, _epoch_batches(train_batches, epoch), rng)
        except DivergenceError as exc:
            raise DivergenceError(f"epoch {epoch}, {exc}", history) from exc
        val_loss, val_acc = validate(spec, params, epoch)
        record = EpochRecord(epoch, train_loss, train_acc, float(val_loss), float(val_acc), lr)
        history.append(record)
        for sink in sinks:
            sink(record)
        log.info("epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %g",
                 epoch, train_loss, train_acc, val_loss, val_acc, lr)
        val_losses.append(record.val_loss)
        if record.val_loss < best_loss:
            best_loss = record.val_loss
            best_params = params.copy()
            if checkpoint_path is not None:
                meta = dict(metadata or {}, epoch=epoch, val_loss=record.val_loss, seed=config.seed)
                save_checkpoint(Checkpoint(spec, best_params, list(class_names or []), meta), checkpoint_path)
                best_path = str(checkpoint_path)
        decision, _ = early_stopping_update(val_losses, config.early_stop_patience)
        if decision == "stop":
            log.info("early stopping after epoch %d", epoch)
            break
        plateau.update(record.val_loss)
    final = best_params if config.restore_best and best_params is not None else params
    return FitResult(final, history, best_path)
