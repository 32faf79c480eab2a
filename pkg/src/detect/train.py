"""Mini-batch training of the classifier on pre-treatment windows."""
from __future__ import annotations

import dataclasses
import logging
import math
import random
import time
from dataclasses import dataclass

import numpy as np

from .datapipe import apply_norm, fit_norm_stats, kfold
from .errors import DivergenceError
from .model import init_params, forward, predict
from .optim import LrSchedule, OptimizerState, adamw_step, clip_global_norm, lr_at
from .tensor import smoothed_cross_entropy_logits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    lr: float

    def log_line(self, total_epochs):
        return (
            f"EPOCH epoch={self.epoch}/{total_epochs} loss={self.loss:.6f} "
            f"train_acc={self.train_acc:.2f} val_acc={self.val_acc:.2f} lr={self.lr:.6g}"
        )


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed)


def accuracy(bundle, ws):
    if len(ws) == 0:
        return float("nan")
    predicted, _ = predict(bundle, ws.values)
    return 100.0 * float(np.mean(predicted == ws.labels))


def train_classifier(train, val, config, on_epoch=None, stop_when=None):
    """Fit a fresh model on ``train``; ``val`` is only evaluated.

    Both sets arrive unnormalized; z-score statistics are fitted on ``train``
    alone and applied to both.  ``on_epoch`` receives each
    :class:`EpochRecord`; ``stop_when`` may end training early by returning
    true for a record.  Returns ``(bundle, history)``.
    """
    seed_everything(config.seed)
    stats = fit_norm_stats(train)
    train = apply_norm(train, stats)
    if val is not None and len(val):
        val = apply_norm(val, stats)

    model_cfg = dataclasses.replace(
        config.model, num_classes=len(train.class_names), seed=config.seed
    )
    bundle = init_params(model_cfg, train.class_names)
    bundle.norm_stats = stats
    params = bundle.params
    rng = np.random.default_rng(config.seed)

    n = len(train)
    steps_per_epoch = math.ceil(n / config.batch_size)
    schedule = LrSchedule.with_warmup_fraction(
        config.epochs * steps_per_epoch, config.lr, config.warmup_fraction
    )
    state = OptimizerState.for_params(
        params,
        learning_rate_base=config.lr,
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        eps_adam=config.eps_adam,
    )

    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        lr = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = forward(bundle, train.values[idx], train_mode=True, rng=rng)
            loss = smoothed_cross_entropy_logits(logits, train.labels[idx], config.label_smoothing)
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            grads = bundle.gradients()
            clip_global_norm(grads, config.clip_norm)
            step += 1
            lr = lr_at(schedule, step)
            adamw_step(params, grads, state, lr)
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == train.labels[idx]))
        val_acc = accuracy(bundle, val) if val is not None else float("nan")
        record = EpochRecord(epoch, loss_sum / n, 100.0 * correct / n, val_acc, lr)
        history.append(record)
        log.info("%s elapsed=%.1fs", record.log_line(config.epochs), time.perf_counter() - started)
        if on_epoch is not None:
            on_epoch(record)
        if stop_when is not None and stop_when(record):
            break
    return bundle, history


def train_kfold(ws, config, on_epoch=None):
    """One model per stratified fold; returns ``[(bundle, history), ...]``."""
    results = []
    for fold, (train, val) in enumerate(kfold(ws, config.folds, config.seed)):
        log.info("FOLD fold=%d/%d train=%d val=%d", fold + 1, config.folds, len(train), len(val))
        results.append(train_classifier(train, val, config, on_epoch))
    return results
