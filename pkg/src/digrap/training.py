"""Mini-batch fine-tuning loop shared by every method.

All methods draw their mini-batch order from the same seeded stream, so two
runs that differ only in the method see identical batches. This is what makes
the reduction identities (e.g. DiGraP with omega pinned to 0 versus plain Adam)
hold bitwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ._validation import rng_for
from .baselines import MethodSpec, lpft_phase, mag_project, probe_mask, unfreeze
from .exceptions import ConfigError, StateError
from .metrics import accuracy
from .models import Batch, ModelSpec, loss_and_grad, predict
from .optim import AdamState, OptimConfig, Schedule, adam_step, l2sp_grad, schedule_lr
from .paramspace import ParamSpace
from .projection import DigrapConfig, DigrapOptimizer, TraceRow


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    schedule: Schedule = field(default_factory=lambda: Schedule("cosine", None, 0.0, 0.1))

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")

    def optim(self, lr=None):
        return OptimConfig(lr=self.lr if lr is None else lr, schedule=self.schedule)


@dataclass
class FitResult:
    space: ParamSpace
    best_epoch: int
    val_history: List[float]
    train_loss: List[float]
    mean_omega: List[float] = field(default_factory=list)
    trace: List[TraceRow] = field(default_factory=list)
    final_space: Optional[ParamSpace] = None


def batch_order(n, batch_size, epochs, seed):
    """Per-epoch index batches; depends only on (n, batch_size, epochs, seed)."""
    rng = rng_for(seed, "batch_order")
    for _ in range(epochs):
        perm = rng.permutation(n)
        yield [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def evaluate(space, spec, x, y):
    return accuracy(predict(space, spec, x), y)


def fit(space: ParamSpace, spec: ModelSpec, x, y, method: Optional[MethodSpec] = None,
        config: Optional[TrainConfig] = None, seed: int = 0, x_val=None, y_val=None) -> FitResult:
    """Fine-tune a copy of ``space`` with ``method``; the input is not modified.

    When validation data is given, accuracy is measured after every epoch and
    the best epoch's parameters are returned (earliest on ties). Methods that
    regularize toward the pre-trained weights need a captured snapshot.
    """
    method = method or MethodSpec()
    config = config or TrainConfig()
    epochs = method.epochs or config.epochs
    lr0 = method.lr or config.lr
    ocfg = config.optim(lr0)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ConfigError("empty training set")
    kind = method.kind
    if kind in ("l2sp", "digrap", "full_projection", "magproj") and not space.has_snapshot:
        raise StateError(f"{kind} needs a captured snapshot")

    work = space.copy()
    steps_per_epoch = -(-n // config.batch_size)
    total = steps_per_epoch * epochs
    lp_epochs = method.lp_epochs_for(epochs) if kind == "lpft" else 0

    digrap_opt = None
    adam = None
    if kind in ("digrap", "full_projection"):
        fixed = 1.0 if kind == "full_projection" else method.fixed_omega
        digrap_opt = DigrapOptimizer(work, DigrapConfig(mu=method.mu, fixed_omega=fixed))
    else:
        adam = AdamState.for_space(work)
    if kind == "linear_probe":
        probe_mask(work, spec)

    best, best_acc, best_epoch = None, -1.0, -1
    val_hist, losses = [], []
    step = 0
    for epoch, batches in enumerate(batch_order(n, config.batch_size, epochs, seed)):
        if kind == "lpft":
            if lpft_phase(epoch, lp_epochs) == "probe":
                probe_mask(work, spec)
            else:
                unfreeze(work)
        epoch_loss = 0.0
        for idx in batches:
            step += 1
            lr = schedule_lr(ocfg, step, total)
            loss, g = loss_and_grad(work, spec, Batch(x[idx], y[idx]))
            epoch_loss += loss * len(idx)
            if digrap_opt is not None:
                digrap_opt.step(g, lr)
                continue
            if kind == "l2sp":
                g = l2sp_grad(work, g, method.lam)
            adam_step(work, adam, g, lr)
            if kind == "magproj":
                mag_project(work, method.gamma)
        losses.append(epoch_loss / n)
        if x_val is not None:
            acc = evaluate(work, spec, x_val, y_val)
            val_hist.append(acc)
            if acc > best_acc:
                best, best_acc, best_epoch = work.copy(), acc, epoch
    final = work
    if best is None:
        best, best_epoch = work.copy(), epochs - 1
    # selection is over trainability too; hand back an all-trainable model
    for s in (best, final):
        if kind in ("linear_probe", "lpft"):
            unfreeze(s)
    out = FitResult(best, best_epoch, val_hist, losses, final_space=final)
    if digrap_opt is not None:
        out.mean_omega = digrap_opt.mean_omega
        out.trace = digrap_opt.trace
    return out


def pretrain(spec: ModelSpec, x, y, config: Optional[TrainConfig] = None, seed: int = 0) -> ParamSpace:
    """Train from a fresh initialization and capture the snapshot."""
    from .paramspace import capture_snapshot, init_params

    space = init_params(spec.layer_sizes, seed)
    res = fit(space, spec, x, y, MethodSpec("vanilla"), config, seed=seed)
    return capture_snapshot(res.space)
