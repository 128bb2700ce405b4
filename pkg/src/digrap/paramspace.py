"""Named per-layer parameter groups, the pre-trained snapshot, and group algebra.

Every weight matrix and every bias vector is its own group. Values are stored
as flat float64 vectors in row-major order; ``ParamGroup.array`` gives a
shaped view that shares memory with ``values``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._validation import as_vector, check_same_length, rng_for
from .exceptions import ConfigError, ShapeError, StateError

# A GradSet maps group name -> flat gradient, in ParamSpace group order.
GradSet = Dict[str, np.ndarray]

CHECKPOINT_VERSION = 1


class ReferenceMode(str, Enum):
    SNAPSHOT = "snapshot"
    ORIGIN = "origin"


@dataclass
class ParamGroup:
    name: str
    shape: tuple
    values: np.ndarray
    trainable: bool = True
    reference_mode: ReferenceMode = ReferenceMode.SNAPSHOT

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != math.prod(self.shape):
            raise ShapeError(
                f"group {self.name!r}: {self.values.size} values for shape {self.shape}"
            )
        self.reference_mode = ReferenceMode(self.reference_mode)

    @property
    def size(self):
        return self.values.size

    @property
    def array(self):
        return self.values.reshape(self.shape)


@dataclass
class ParamSpace:
    groups: List[ParamGroup]
    snapshot: Optional[List[np.ndarray]] = None
    rng_seed: int = 0
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {}
        for i, g in enumerate(self.groups):
            if g.name in self._index:
                raise ConfigError(f"duplicate group name {g.name!r}")
            self._index[g.name] = i
        if self.snapshot is not None:
            self.snapshot = [_frozen_copy(s) for s in self.snapshot]
            self._check_snapshot_layout()

    def _check_snapshot_layout(self):
        if len(self.snapshot) != len(self.groups):
            raise ShapeError("snapshot layout does not mirror groups")
        for g, s in zip(self.groups, self.snapshot):
            if s.shape != g.values.shape:
                raise ShapeError(f"snapshot for {g.name!r} has wrong length")

    def __getitem__(self, name) -> ParamGroup:
        return self.groups[self._index[name]]

    def __contains__(self, name):
        return name in self._index

    def __iter__(self):
        return iter(self.groups)

    def __len__(self):
        return len(self.groups)

    @property
    def names(self):
        return [g.name for g in self.groups]

    @property
    def has_snapshot(self):
        return self.snapshot is not None

    def copy(self) -> "ParamSpace":
        groups = [
            ParamGroup(g.name, g.shape, g.values.copy(), g.trainable, g.reference_mode)
            for g in self.groups
        ]
        # snapshot arrays are read-only, sharing them is safe
        out = ParamSpace(groups, None, self.rng_seed)
        out.snapshot = self.snapshot
        return out

    def add_group(self, group: ParamGroup):
        if group.name in self._index:
            raise ConfigError(f"duplicate group name {group.name!r}")
        self._index[group.name] = len(self.groups)
        self.groups.append(group)
        if self.snapshot is not None:
            # adapters attached after pre-training start from their current values
            self.snapshot = self.snapshot + [_frozen_copy(group.values)]

    def reference(self, name) -> np.ndarray:
        """Regularization reference for a group: its snapshot or the origin."""
        g = self[name]
        if g.reference_mode is ReferenceMode.ORIGIN:
            return np.zeros_like(g.values)
        if self.snapshot is None:
            raise StateError("snapshot not captured")
        return self.snapshot[self._index[name]]

    def snapshot_of(self, name) -> np.ndarray:
        if self.snapshot is None:
            raise StateError("snapshot not captured")
        return self.snapshot[self._index[name]]

    def zeros_grad(self) -> GradSet:
        return {g.name: np.zeros_like(g.values) for g in self.groups}

    def check_layout(self, grads: GradSet):
        if list(grads) != self.names:
            raise ShapeError("GradSet names/order do not mirror the ParamSpace")
        for g in self.groups:
            if grads[g.name].shape != g.values.shape:
                raise ShapeError(f"GradSet entry {g.name!r} has wrong length")

    def set_trainable(self, names: Optional[Sequence[str]] = None):
        """Make exactly ``names`` trainable; ``None`` unfreezes everything."""
        keep = set(self.names if names is None else names)
        unknown = keep - set(self.names)
        if unknown:
            raise ConfigError(f"unknown groups: {sorted(unknown)}")
        for g in self.groups:
            g.trainable = g.name in keep
        return self

    def trainable_names(self):
        return [g.name for g in self.groups if g.trainable]

    # --- checkpoint round-trip -------------------------------------------------

    def to_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "seed": int(self.rng_seed),
            "groups": [
                {
                    "name": g.name,
                    "shape": list(g.shape),
                    "values": g.values.tolist(),
                    "trainable": bool(g.trainable),
                    "reference_mode": g.reference_mode.value,
                }
                for g in self.groups
            ],
            "snapshot": None if self.snapshot is None else [s.tolist() for s in self.snapshot],
        }

    @classmethod
    def from_dict(cls, data) -> "ParamSpace":
        groups = [
            ParamGroup(
                g["name"],
                tuple(g["shape"]),
                np.array(g["values"], dtype=np.float64),
                g.get("trainable", True),
                g.get("reference_mode", ReferenceMode.SNAPSHOT.value),
            )
            for g in data["groups"]
        ]
        snap = data.get("snapshot")
        if snap is not None:
            snap = [np.array(s, dtype=np.float64) for s in snap]
        return cls(groups, snap, int(data.get("seed", 0)))

    def save(self, path):
        # json emits repr() floats, which round-trip float64 exactly
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ParamSpace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _frozen_copy(a):
    out = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


def init_params(layer_sizes: Sequence[int], seed: int) -> ParamSpace:
    """Fan-in Gaussian weights (std sqrt(2/fan_in)) and zero biases.

    ``layer_sizes`` lists input dim, hidden widths and output classes. Groups
    are named ``W0, b0, W1, b1, ...`` with weight shape (fan_out, fan_in).
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError("layer_sizes needs at least an input and an output size")
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    rng = rng_for(seed, "init_params")
    groups = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in)
        groups.append(ParamGroup(f"W{i}", (fan_out, fan_in), w.reshape(-1)))
        groups.append(ParamGroup(f"b{i}", (fan_out,), np.zeros(fan_out)))
    return ParamSpace(groups, None, int(seed))


def capture_snapshot(space: ParamSpace) -> ParamSpace:
    """Freeze the current values as the pre-trained reference (in place)."""
    if space.snapshot is not None:
        raise StateError("snapshot already captured")
    space.snapshot = [_frozen_copy(g.values) for g in space.groups]
    return space


def group_dot(a, b) -> float:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_length(a, b)
    return float(np.dot(a, b))


def group_norm_sq(a) -> float:
    a = as_vector(a, "a")
    return float(np.dot(a, a))
