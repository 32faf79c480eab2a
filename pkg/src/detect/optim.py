"""AdamW, global-norm gradient clipping and the warmup + cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError, ScheduleExhaustedError


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup from 0 to ``base_lr`` then cosine decay to exactly 0."""

    warmup_steps: int
    total_steps: int
    base_lr: float

    def __post_init__(self):
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be non-negative")
        if self.total_steps < 1 or self.total_steps < self.warmup_steps:
            raise ConfigError("total_steps must be positive and >= warmup_steps")
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be positive")

    @classmethod
    def with_warmup_fraction(cls, total_steps, base_lr, warmup_fraction=0.1):
        return cls(int(round(warmup_fraction * total_steps)), total_steps, base_lr)


def lr_at(schedule, step):
    if step < 0:
        raise ContractError("step must be non-negative")
    if step > schedule.total_steps:
        raise ScheduleExhaustedError(
            f"step {step} is past the schedule end ({schedule.total_steps})"
        )
    warm = schedule.warmup_steps
    if step < warm:
        return schedule.base_lr * step / warm
    decay_span = schedule.total_steps - warm
    if decay_span == 0:
        return schedule.base_lr
    progress = (step - warm) / decay_span
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_global_norm(grads, cap=1.0):
    """Rescale gradients in place so their joint l2 norm is at most ``cap``.

    ``grads`` maps parameter names to arrays.  Returns the scale applied
    (1.0 when the norm is already within the cap).
    """
    if not cap > 0:
        raise ContractError("cap must be positive")
    total = 0.0
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}", name)
        total += float(np.dot(g.ravel(), g.ravel()))
    norm = math.sqrt(total)
    if norm <= cap:
        return 1.0
    scale = cap / norm
    for g in grads.values():
        g *= scale
    return scale


@dataclass
class OptimizerState:
    learning_rate_base: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **kwargs):
        state = cls(**kwargs)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(_array(p))
            state.second_moment[name] = np.zeros_like(_array(p))
        return state


def _array(p):
    return p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p


def adamw_step(params, grads, state, lr):
    """One AdamW update, applied in place to ``params``.

    Weight decay is decoupled: ``theta -= lr * wd * theta`` happens before,
    and independently of, the bias-corrected Adam step.  ``params`` maps
    names to arrays or tensors; ``grads`` maps the same names to arrays.
    """
    if set(grads) != set(params):
        raise ContractError("params and grads must have the same names")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        theta = _array(p)
        g = grads[name]
        if g.shape != theta.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter {name!r} {theta.shape}"
            )
        m = state.first_moment.setdefault(name, np.zeros_like(theta))
        v = state.second_moment.setdefault(name, np.zeros_like(theta))
        if m.shape != theta.shape:
            raise ContractError(f"moment buffer for {name!r} has the wrong shape")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            theta -= lr * state.weight_decay * theta
        theta -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps_adam)
    return state
