"""Comparison methods: linear probing, LP-FT, L2-SP, WiSE-FT, magnitude projection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import ConfigError, ShapeError, StateError
from .models import ModelSpec
from .paramspace import ParamSpace

METHOD_KINDS = (
    "vanilla", "linear_probe", "lpft", "l2sp", "wiseft", "digrap", "full_projection", "magproj",
)
DEFAULT_WISE_BETAS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class MethodSpec:
    """One row of the comparison matrix.

    Only the fields relevant to ``kind`` are read: ``lp_epochs`` (lpft),
    ``lam`` (l2sp), ``betas`` (wiseft), ``mu``/``fixed_omega`` (digrap),
    ``gamma`` (magproj). ``epochs`` and ``lr`` override the run defaults.
    """

    kind: str = "vanilla"
    lp_epochs: Optional[int] = None
    lam: float = 0.0
    betas: Tuple[float, ...] = DEFAULT_WISE_BETAS
    mu: float = 0.5
    fixed_omega: Optional[float] = None
    gamma: float = 1.0
    epochs: Optional[int] = None
    lr: Optional[float] = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method kind {self.kind!r}; expected one of {METHOD_KINDS}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if any(not 0.0 <= b <= 1.0 for b in self.betas):
            raise ConfigError("WiSE-FT betas must lie in [0, 1]")
        if self.kind == "magproj" and not self.gamma > 0:
            raise ConfigError("magproj gamma must be > 0")
        if self.lam < 0:
            raise ConfigError("l2sp lambda must be >= 0")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if self.fixed_omega is not None and not 0.0 <= self.fixed_omega <= 1.0:
            raise ConfigError("fixed_omega must lie in [0, 1]")
        if self.lp_epochs is not None and self.lp_epochs < 0:
            raise ConfigError("lp_epochs must be >= 0")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @property
    def label(self):
        k = self.kind
        if k == "vanilla":
            return "VanillaFT"
        if k == "linear_probe":
            return "LinearProbe"
        if k == "lpft":
            return "LPFT" if self.lp_epochs is None else f"LPFT(lp={self.lp_epochs})"
        if k == "l2sp":
            return f"L2SP(lam={self.lam:g})"
        if k == "wiseft":
            return "WiSEFT"
        if k == "digrap":
            if self.fixed_omega is not None:
                return f"DiGraP(omega={self.fixed_omega:g})"
            return f"DiGraP(mu={self.mu:g})"
        if k == "full_projection":
            return "FullProjection"
        return f"MagProj(gamma={self.gamma:g})"

    def lp_epochs_for(self, total_epochs):
        """LP-FT probe length; defaults to 20% of the budget."""
        lp = self.lp_epochs if self.lp_epochs is not None else int(round(0.2 * total_epochs))
        if self.kind == "lpft" and lp > total_epochs:
            raise ConfigError("lp_epochs exceeds the epoch budget")
        return lp


def wise_interpolate(theta0: ParamSpace, theta_ft: ParamSpace, beta: float) -> ParamSpace:
    """Per-group ``(1 - beta) * theta0 + beta * theta_ft``.

    ``theta0`` may be any space with a snapshot (its snapshot is used) or a
    plain space holding the pre-trained values.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigError("beta must lie in [0, 1]")
    if theta0.names != theta_ft.names:
        raise ShapeError("layouts differ")
    out = theta_ft.copy()
    for i, grp in enumerate(out.groups):
        base = theta0.snapshot[i] if theta0.has_snapshot else theta0.groups[i].values
        if base.shape != grp.values.shape:
            raise ShapeError(f"group {grp.name!r} length differs")
        if beta == 0.0:
            grp.values[:] = base
        elif beta != 1.0:
            grp.values[:] = (1.0 - beta) * base + beta * grp.values
    return out


def head_groups(spec: ModelSpec):
    last = spec.n_layers - 1
    return [f"W{last}", f"b{last}"]


def probe_mask(space: ParamSpace, spec: ModelSpec) -> ParamSpace:
    """Freeze everything except the final weight and bias (in place)."""
    return space.set_trainable(head_groups(spec))


def unfreeze(space: ParamSpace) -> ParamSpace:
    return space.set_trainable(None)


def lpft_phase(epoch: int, lp_epochs: int) -> str:
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return "probe" if epoch < lp_epochs else "full"


def mag_project(space: ParamSpace, gamma: float) -> ParamSpace:
    """Pull each group back into the ball ``||theta - theta0|| <= gamma`` (in place)."""
    if not gamma > 0:
        raise ConfigError("gamma must be > 0")
    if not space.has_snapshot:
        raise StateError("snapshot not captured")
    for grp in space.groups:
        ref = space.reference(grp.name)
        diff = grp.values - ref
        norm = float(np.sqrt(np.dot(diff, diff)))
        if norm > gamma:
            grp.values[:] = ref + (gamma / norm) * diff
    return space
