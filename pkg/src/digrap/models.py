"""Small deterministic classifiers with hand-written backpropagation.

Supported models are a linear softmax classifier and a ReLU MLP, either of
which may carry a low-rank adapter ``W + B @ A`` on one layer. Gradients are
exact; ``grad_check`` and ``input_grad_check`` compare them against central
finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ._validation import as_matrix, check_finite, check_labels, rng_for
from .exceptions import ConfigError, ShapeError
from .paramspace import GradSet, ParamGroup, ParamSpace, ReferenceMode


@dataclass(frozen=True)
class Adapter:
    target_layer: int
    rank: int


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    layer_sizes: tuple
    adapter: Optional[Adapter] = None

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind == "linear":
            if len(self.layer_sizes) != 2:
                raise ConfigError("a linear model has exactly [input, classes]")
        elif kind == "mlp":
            if len(self.layer_sizes) < 3:
                raise ConfigError("an MLP needs at least one hidden layer")
        else:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if any(s <= 0 for s in self.layer_sizes):
            raise ConfigError("layer sizes must be positive")
        if self.adapter is not None:
            i = self.adapter.target_layer
            if not 0 <= i < self.n_layers:
                raise ConfigError(f"adapter target layer {i} out of range")
            fan_out, fan_in = self.layer_sizes[i + 1], self.layer_sizes[i]
            if not 1 <= self.adapter.rank < min(fan_in, fan_out):
                raise ConfigError("adapter rank must be in [1, min(layer dims))")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    @classmethod
    def linear(cls, d, k):
        return cls("linear", (d, k))

    @classmethod
    def mlp(cls, d, hidden: Sequence[int], k, adapter=None):
        return cls("mlp", (d, *hidden, k), adapter)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = as_matrix(self.x)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)

    def __len__(self):
        return self.x.shape[0]


class ForwardResult(NamedTuple):
    loss: float
    logits: np.ndarray
    features: np.ndarray


def attach_adapter(space: ParamSpace, spec: ModelSpec, seed: int) -> ParamSpace:
    """Add zero-initialized ``B`` and Gaussian ``A`` factors; freeze everything else.

    Adapter groups regularize toward the origin, so the model starts at the
    base function and DiGraP penalizes ``||theta||`` for them.
    """
    if spec.adapter is None:
        raise ConfigError("spec has no adapter")
    i, r = spec.adapter.target_layer, spec.adapter.rank
    fan_out, fan_in = spec.layer_sizes[i + 1], spec.layer_sizes[i]
    rng = rng_for(seed, "adapter", i)
    a = rng.standard_normal((r, fan_in)) * np.sqrt(1.0 / fan_in)
    space.set_trainable([])
    space.add_group(ParamGroup(f"A{i}", (r, fan_in), a.reshape(-1), True, ReferenceMode.ORIGIN))
    space.add_group(ParamGroup(f"B{i}", (fan_out, r), np.zeros(fan_out * r), True, ReferenceMode.ORIGIN))
    return space


def _check_inputs(space, spec, batch):
    x = batch.x
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"input dim {x.shape[1]} != model input dim {spec.input_dim}")
    check_finite(x, "batch.x")
    y = check_labels(batch.y, x.shape[0], spec.n_classes)
    for i in range(spec.n_layers):
        w = space[f"W{i}"]
        if w.shape != (spec.layer_sizes[i + 1], spec.layer_sizes[i]):
            raise ShapeError(f"W{i} has shape {w.shape}, spec expects a different layout")
    return x, y


def _weight(space, spec, i):
    w = space[f"W{i}"].array
    if spec.adapter is not None and spec.adapter.target_layer == i:
        w = w + space[f"B{i}"].array @ space[f"A{i}"].array
    return w


def _forward(space, spec, x):
    """Returns per-layer inputs and the final logits."""
    inputs = []
    h = x
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        inputs.append(h)
        z = h @ _weight(space, spec, i).T + space[f"b{i}"].values
        h = np.maximum(z, 0.0) if i < last else z
    return inputs, h


def _cross_entropy(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = logits.shape[0]
    loss = float(np.mean(lse - z[np.arange(n), y]))
    probs = np.exp(z - lse[:, None])
    return loss, probs


def forward_loss(space: ParamSpace, spec: ModelSpec, batch: Batch) -> ForwardResult:
    x, y = _check_inputs(space, spec, batch)
    inputs, logits = _forward(space, spec, x)
    loss, _ = _cross_entropy(logits, y)
    return ForwardResult(loss, logits, inputs[-1])


def predict_logits(space: ParamSpace, spec: ModelSpec, x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"input dim {x.shape[1]} != model input dim {spec.input_dim}")
    check_finite(x, "x")
    return _forward(space, spec, x)[1]


def predict(space: ParamSpace, spec: ModelSpec, x) -> np.ndarray:
    return np.argmax(predict_logits(space, spec, x), axis=1)


def extract_features(space: ParamSpace, spec: ModelSpec, batch) -> np.ndarray:
    """Penultimate activations (the raw input for a linear model)."""
    x = batch.x if isinstance(batch, Batch) else as_matrix(batch)
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"input dim {x.shape[1]} != model input dim {spec.input_dim}")
    check_finite(x, "x")
    return _forward(space, spec, x)[0][-1]


def _backprop(space, spec, x, y, want_input=False):
    inputs, logits = _forward(space, spec, x)
    loss, probs = _cross_entropy(logits, y)
    n = x.shape[0]
    dz = probs
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grads = {}
    dx = None
    for i in reversed(range(spec.n_layers)):
        h = inputs[i]
        w = _weight(space, spec, i)
        dw = dz.T @ h
        grads[f"W{i}"] = dw
        grads[f"b{i}"] = dz.sum(axis=0)
        if spec.adapter is not None and spec.adapter.target_layer == i:
            grads[f"B{i}"] = dw @ space[f"A{i}"].array.T
            grads[f"A{i}"] = space[f"B{i}"].array.T @ dw
        if i > 0 or want_input:
            dh = dz @ w
            if i > 0:
                dz = dh * (h > 0.0)
            else:
                dx = dh
    out = {}
    for g in space.groups:
        if g.trainable and g.name in grads:
            out[g.name] = np.ascontiguousarray(grads[g.name]).reshape(-1)
        else:
            out[g.name] = np.zeros_like(g.values)
    return loss, out, dx


def backward(space: ParamSpace, spec: ModelSpec, batch: Batch) -> GradSet:
    """Exact gradient of the mean cross-entropy; frozen groups get zeros."""
    x, y = _check_inputs(space, spec, batch)
    return _backprop(space, spec, x, y)[1]


def loss_and_grad(space: ParamSpace, spec: ModelSpec, batch: Batch):
    x, y = _check_inputs(space, spec, batch)
    loss, grads, _ = _backprop(space, spec, x, y)
    return loss, grads


def input_grad(space: ParamSpace, spec: ModelSpec, batch: Batch) -> np.ndarray:
    x, y = _check_inputs(space, spec, batch)
    return _backprop(space, spec, x, y, want_input=True)[2]


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _reference_loss(params, spec, x, y):
    """Forward loss in extended precision, written independently of ``_forward``.

    Central differences at h=1e-5 lose about eps*L/h to rounding; float64 would
    swamp coordinates whose gradient is below ~1e-6, long double does not.
    """
    h = x
    for i in range(spec.n_layers):
        w = params[f"W{i}"]
        if spec.adapter is not None and spec.adapter.target_layer == i:
            w = w + params[f"B{i}"] @ params[f"A{i}"]
        z = h @ w.T + params[f"b{i}"]
        h = np.where(z > 0, z, 0) if i < spec.n_layers - 1 else z
    top = h.max(axis=1, keepdims=True)
    lse = np.log(np.exp(h - top).sum(axis=1)) + top[:, 0]
    return (lse - h[np.arange(len(y)), y]).sum() / len(y)


def _extended(space):
    return {g.name: g.array.astype(np.longdouble) for g in space.groups}


def grad_check(space: ParamSpace, spec: ModelSpec, batch: Batch, h: float = 1e-5,
               max_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between ``backward`` and central differences.

    Groups larger than ``max_coords`` are checked on a seeded random subset of
    that many coordinates. Frozen groups are skipped (both sides are zero).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ConfigError(f"step h={h} outside [1e-7, 1e-3]")
    analytic = backward(space, spec, batch)
    x, y = _check_inputs(space, spec, batch)
    xl = x.astype(np.longdouble)
    params = _extended(space)
    hl = np.longdouble(h)
    worst = 0.0
    for g in space.groups:
        if not g.trainable:
            continue
        if g.size > max_coords:
            idx = rng_for(seed, "grad_check", g.name).choice(g.size, max_coords, replace=False)
        else:
            idx = np.arange(g.size)
        flat = params[g.name].reshape(-1)
        numeric = np.empty(idx.size)
        for k, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + hl
            lp = _reference_loss(params, spec, xl, y)
            flat[j] = orig - hl
            lm = _reference_loss(params, spec, xl, y)
            flat[j] = orig
            numeric[k] = float((lp - lm) / (2 * hl))
        if idx.size:
            worst = max(worst, float(_rel_err(analytic[g.name][idx], numeric).max()))
    return worst


def input_grad_check(space: ParamSpace, spec: ModelSpec, batch: Batch, h: float = 1e-5) -> float:
    """Same as ``grad_check`` but for the gradient with respect to the inputs."""
    if not 1e-7 <= h <= 1e-3:
        raise ConfigError(f"step h={h} outside [1e-7, 1e-3]")
    analytic = input_grad(space, spec, batch)
    x, y = _check_inputs(space, spec, batch)
    xl = x.astype(np.longdouble)
    params = _extended(space)
    hl = np.longdouble(h)
    numeric = np.empty_like(x)
    for idx in np.ndindex(*x.shape):
        orig = xl[idx]
        xl[idx] = orig + hl
        lp = _reference_loss(params, spec, xl, y)
        xl[idx] = orig - hl
        lm = _reference_loss(params, spec, xl, y)
        xl[idx] = orig
        numeric[idx] = float((lp - lm) / (2 * hl))
    return float(_rel_err(analytic, numeric).max())
