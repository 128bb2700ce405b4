"""Directional gradient projection with a trainable, per-layer strength.

For each parameter group the task gradient ``g1`` is compared with the
regularization gradient ``g2 = theta - theta_ref``. When they conflict
(``g1 . g2 < 0``) the component of ``g1`` along ``g2`` is removed with
strength ``omega`` in [0, 1]; otherwise ``g1`` passes through untouched. The
result is an L2-SP gradient whose coefficient varies per layer and per step.

``omega`` starts at 0 and is learned online by a hypergradient: the
derivative of the task loss at the current point with respect to the
``omega`` used on the previous step, which is ``lr_prev * g1_t . proj_{t-1}``.
That value is normalized to a cosine and fed to a scalar Adam, and the
result is clipped to [0, 1].
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from ._validation import as_vector, check_same_length
from .exceptions import ConfigError, StateError
from .optim import AdamState, _check_grads, adam_step
from .paramspace import GradSet, ParamSpace

NORM_EPS = 1e-12


@dataclass
class DigrapConfig:
    mu: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    norm_eps: float = NORM_EPS
    fixed_omega: Optional[float] = None

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if self.fixed_omega is not None and not 0.0 <= self.fixed_omega <= 1.0:
            raise ConfigError("fixed_omega must lie in [0, 1]")


@dataclass
class DigrapLayerState:
    prev_proj: np.ndarray
    omega: float = 0.0
    m: float = 0.0
    v: float = 0.0
    updates: int = 0
    prev_lr: float = 0.0

    @classmethod
    def for_size(cls, n):
        return cls(np.zeros(n))

    def copy(self):
        return DigrapLayerState(self.prev_proj.copy(), self.omega, self.m, self.v,
                                self.updates, self.prev_lr)


class Projection(NamedTuple):
    g: np.ndarray
    conflicting: bool
    proj: np.ndarray
    dot: float
    norm_sq: float


class TraceRow(NamedTuple):
    step: int
    group: str
    omega: float
    lambda_equiv: float
    conflicting: bool
    dot: float
    grad_norm: float
    reg_norm: float


@dataclass
class StepTrace:
    step: int
    rows: List[TraceRow]
    assembled: GradSet = field(repr=False)
    reg: GradSet = field(repr=False)

    @property
    def mean_omega(self):
        return float(np.mean([r.omega for r in self.rows])) if self.rows else 0.0


def reg_gradient(values, reference) -> np.ndarray:
    """Gradient of ``0.5 * ||theta - theta_ref||^2``."""
    return np.asarray(values, dtype=np.float64) - np.asarray(reference, dtype=np.float64)


def project_gradient(g1, g2, omega: float, norm_eps: float = NORM_EPS) -> Projection:
    g1 = as_vector(g1, "g1")
    g2 = as_vector(g2, "g2")
    check_same_length(g1, g2)
    if not 0.0 <= omega <= 1.0:
        raise ConfigError(f"omega={omega} outside [0, 1]")
    dot = float(np.dot(g1, g2))
    nsq = float(np.dot(g2, g2))
    if nsq <= norm_eps:
        return Projection(g1, False, np.zeros_like(g1), dot, nsq)
    proj = (dot / nsq) * g2
    if dot >= 0:
        return Projection(g1, False, proj, dot, nsq)
    if omega == 0.0:
        return Projection(g1, True, proj, dot, nsq)
    return Projection(g1 - omega * proj, True, proj, dot, nsq)


def equivalent_lambda(dot: float, norm_sq: float, omega: float, conflicting: bool) -> float:
    """The L2-SP coefficient that reproduces the projected gradient."""
    if not conflicting or omega == 0.0:
        return 0.0
    return -omega * dot / norm_sq


def hypergrad_omega(g_t1, prev_proj, prev_lr: float, norm_eps: float = NORM_EPS):
    """Returns ``(raw, normalized)`` derivative of the loss w.r.t. last step's omega."""
    g_t1 = as_vector(g_t1, "g_t1")
    prev_proj = as_vector(prev_proj, "prev_proj")
    check_same_length(g_t1, prev_proj)
    dot = float(np.dot(g_t1, prev_proj))
    raw = prev_lr * dot
    scale = prev_lr * math.sqrt(float(np.dot(g_t1, g_t1))) * math.sqrt(float(np.dot(prev_proj, prev_proj)))
    normalized = raw / (scale + norm_eps)
    # rounding can push the cosine a hair past 1
    return raw, min(1.0, max(-1.0, normalized))


def omega_update(state: DigrapLayerState, grad: float, cfg: DigrapConfig, t: int) -> DigrapLayerState:
    """Clipped scalar-Adam descent step on omega, in place.

    ``t`` is the global optimizer step; the first omega update happens at
    t=2, and the Adam bias correction counts omega updates (t-1), so the first
    one moves omega by ``mu`` against the sign of ``grad``.
    """
    if t < 2:
        raise StateError("omega is fixed at 0 on the first step")
    if cfg.fixed_omega is not None:
        state.omega = float(cfg.fixed_omega)
        return state
    state.updates += 1
    k = state.updates
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = state.m / (1.0 - cfg.beta1**k)
    v_hat = state.v / (1.0 - cfg.beta2**k)
    proposed = state.omega - cfg.mu * m_hat / (math.sqrt(v_hat) + cfg.eps)
    state.omega = min(1.0, max(0.0, proposed))
    return state


def init_states(space: ParamSpace) -> Dict[str, DigrapLayerState]:
    return {g.name: DigrapLayerState.for_size(g.size) for g in space.groups}


def digrap_step(space: ParamSpace, adam: AdamState, dstates: Dict[str, DigrapLayerState],
                cfg: DigrapConfig, g1: GradSet, lr: float) -> StepTrace:
    """One step of Adam with trainable directional gradient projection.

    Everything is computed on copies first and committed only once the
    assembled gradient exists, so an exception leaves all state untouched.
    """
    if not space.has_snapshot:
        raise StateError("snapshot not captured")
    _check_grads(space, g1)
    t = adam.t + 1
    new_states = {}
    assembled = {}
    reg = {}
    rows = []
    for grp in space.groups:
        name = grp.name
        if not grp.trainable:
            assembled[name] = g1[name]
            reg[name] = np.zeros_like(grp.values)
            continue
        st = dstates[name].copy()
        g2 = reg_gradient(grp.values, space.reference(name))
        if t == 1:
            st.omega = 0.0
        else:
            _, grad_omega = hypergrad_omega(g1[name], st.prev_proj, st.prev_lr, cfg.norm_eps)
            omega_update(st, grad_omega, cfg, t)
        res = project_gradient(g1[name], g2, st.omega, cfg.norm_eps)
        st.prev_proj = res.proj
        st.prev_lr = lr
        lam = equivalent_lambda(res.dot, res.norm_sq, st.omega, res.conflicting)
        assembled[name] = res.g
        reg[name] = g2
        new_states[name] = st
        rows.append(TraceRow(t, name, st.omega, lam, res.conflicting, res.dot,
                             math.sqrt(float(np.dot(g1[name], g1[name]))), math.sqrt(res.norm_sq)))
    adam_step(space, adam, assembled, lr)
    dstates.update(new_states)
    return StepTrace(t, rows, assembled, reg)


class DigrapOptimizer:
    """Bundles the Adam state and per-group omega state for one training run."""

    def __init__(self, space: ParamSpace, config: Optional[DigrapConfig] = None):
        self.space = space
        self.config = config or DigrapConfig()
        self.adam = AdamState.for_space(space)
        self.states = init_states(space)
        self.trace: List[TraceRow] = []
        self.mean_omega: List[float] = []

    def step(self, g1: GradSet, lr: float) -> StepTrace:
        tr = digrap_step(self.space, self.adam, self.states, self.config, g1, lr)
        self.trace.extend(tr.rows)
        self.mean_omega.append(tr.mean_omega)
        return tr

    def omegas(self):
        return {n: s.omega for n, s in self.states.items() if self.space[n].trainable}


TRACE_HEADER = ["step", "group_name", "omega", "lambda_equiv", "conflicting", "dot",
                "grad_norm", "reg_norm"]


def write_trace_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([r.step, r.group, repr(r.omega), repr(r.lambda_equiv),
                        int(r.conflicting), repr(r.dot), repr(r.grad_norm), repr(r.reg_norm)])
