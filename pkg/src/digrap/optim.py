"""Adam with bias correction, plain SGD, the L2-SP gradient, and LR schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .exceptions import ConfigError, NumericError, StateError
from .paramspace import GradSet, ParamSpace

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    @classmethod
    def for_space(cls, space: ParamSpace, **kw) -> "AdamState":
        return cls(
            {g.name: np.zeros_like(g.values) for g in space.groups},
            {g.name: np.zeros_like(g.values) for g in space.groups},
            **kw,
        )


@dataclass(frozen=True)
class Schedule:
    """``constant`` or ``cosine`` with linear warmup.

    ``warmup_steps=None`` means ``round(warmup_frac * total_steps)``.
    """

    kind: str = "constant"
    warmup_steps: Optional[int] = None
    min_lr: float = 0.0
    warmup_frac: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule {self.kind!r}")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError("warmup_frac must lie in [0, 1]")
        if self.min_lr < 0:
            raise ConfigError("min_lr must be >= 0")

    def warmup_for(self, total):
        if self.warmup_steps is not None:
            return min(self.warmup_steps, total)
        return int(round(self.warmup_frac * total))


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    lambda_l2sp: float = 0.0
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.lambda_l2sp < 0:
            raise ConfigError("lambda_l2sp must be >= 0")
        if self.schedule.min_lr > self.lr:
            raise ConfigError("min_lr must not exceed lr")


def _check_grads(space, g):
    space.check_layout(g)
    for grp in space.groups:
        if grp.trainable and not np.all(np.isfinite(g[grp.name])):
            raise NumericError(f"non-finite gradient in group {grp.name!r}")


def adam_step(space: ParamSpace, state: AdamState, g: GradSet, lr: float) -> None:
    """One bias-corrected Adam update, in place. Frozen groups are untouched.

    Validation happens before any mutation, so a bad gradient leaves both the
    parameters and the moments as they were.
    """
    _check_grads(space, g)
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for grp in space.groups:
        if not grp.trainable:
            continue
        gi = g[grp.name]
        m = state.m[grp.name]
        v = state.v[grp.name]
        m *= b1
        m += (1.0 - b1) * gi
        v *= b2
        v += (1.0 - b2) * (gi * gi)
        m_hat = m / c1
        v_hat = v / c2
        grp.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(space: ParamSpace, g: GradSet, lr: float) -> None:
    if not lr > 0:
        raise ConfigError("lr must be > 0")
    _check_grads(space, g)
    for grp in space.groups:
        if grp.trainable:
            grp.values -= lr * g[grp.name]


def l2sp_grad(space: ParamSpace, g1: GradSet, lam: float) -> GradSet:
    """``g1 + lam * (theta - theta_ref)`` per group."""
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    if not space.has_snapshot:
        raise StateError("snapshot not captured")
    space.check_layout(g1)
    out = {}
    for grp in space.groups:
        out[grp.name] = g1[grp.name] + lam * (grp.values - space.reference(grp.name))
    return out


def schedule_lr(config: OptimConfig, t: int, total: int) -> float:
    """Learning rate at step ``t`` of ``total``.

    The cosine schedule ramps linearly from 0 to ``lr`` over the warmup and
    then anneals to ``min_lr`` at ``t == total``.
    """
    if total <= 0:
        raise ConfigError("total steps must be positive")
    if not 0 <= t <= total:
        raise ConfigError(f"step {t} outside [0, {total}]")
    sched = config.schedule
    lr = config.lr
    if sched.kind == "constant":
        return lr
    w = sched.warmup_for(total)
    if t < w:
        return lr * t / w
    if total == w:
        return lr
    progress = (t - w) / (total - w)
    return sched.min_lr + (lr - sched.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))
