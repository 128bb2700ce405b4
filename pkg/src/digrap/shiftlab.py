"""Synthetic pretrain / ID / OOD benchmark built on a Gaussian mixture.

The pre-training distribution is an isotropic mixture with class means on a
sphere of radius ``R``. The ID task is the same mixture rotated by 15
degrees. OOD sets rotate further, skew the label prior, add noise, or attack
the fine-tuned model with a one-step sign perturbation.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from ._validation import as_matrix, rng_for
from .exceptions import ConfigError, ShapeError
from .models import Batch, ModelSpec, input_grad
from .paramspace import ParamSpace

TIERS = ("ID", "NearOOD", "FarOOD")


@dataclass(frozen=True)
class TaskSpec:
    d: int = 16
    K: int = 8
    n_pretrain: int = 8000
    n_id_train: int = 2560
    n_id_val: int = 1000
    n_test: int = 1000
    radius: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        for name in ("n_pretrain", "n_id_train", "n_id_val", "n_test"):
            if getattr(self, name) < self.K:
                raise ConfigError(f"{name} must be >= K")
        if not self.radius > 0:
            raise ConfigError("radius must be > 0")


@dataclass(frozen=True)
class ShiftSpec:
    """Composable shift description; unset components are not applied.

    Components apply in the order rotation, label prior, corruption,
    adversarial.
    """

    tier: str = "ID"
    rotation: Optional[float] = None
    corruption: Optional[float] = None
    dirichlet_alpha: Optional[float] = None
    adversarial_eps: Optional[float] = None

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ConfigError(f"tier must be one of {TIERS}")
        if self.rotation is not None and not 0.0 <= self.rotation <= 180.0:
            raise ConfigError("rotation must lie in [0, 180] degrees")
        if self.corruption is not None and self.corruption < 0:
            raise ConfigError("corruption sigma must be >= 0")
        if self.dirichlet_alpha is not None and not self.dirichlet_alpha > 0:
            raise ConfigError("dirichlet alpha must be > 0")
        if self.adversarial_eps is not None and self.adversarial_eps < 0:
            raise ConfigError("adversarial eps must be >= 0")

    @property
    def kind(self):
        parts = [n for n, v in (("rotation", self.rotation), ("label_prior", self.dirichlet_alpha),
                                ("corruption", self.corruption),
                                ("adversarial", self.adversarial_eps)) if v is not None]
        return "+".join(parts) or "none"


@dataclass
class ShiftedDataset:
    x: np.ndarray
    y: np.ndarray
    spec: ShiftSpec = field(default_factory=ShiftSpec)
    provenance_seed: int = 0
    priors: Optional[np.ndarray] = None

    def __len__(self):
        return self.x.shape[0]

    @property
    def batch(self):
        return Batch(self.x, self.y)


def class_means(task: TaskSpec) -> np.ndarray:
    """K means drawn uniformly on the radius-R sphere, fixed per task seed."""
    rng = rng_for(task.seed, "class_means")
    m = rng.standard_normal((task.K, task.d))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return task.radius * m


def _check_priors(priors, k):
    p = np.asarray(priors, dtype=np.float64)
    if p.shape != (k,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ConfigError("priors must be a length-K probability vector")
    return p


def gen_gaussian_mixture(task: TaskSpec, n: int, priors=None, seed: int = 0) -> ShiftedDataset:
    if n < 0:
        raise ConfigError("n must be >= 0")
    p = np.full(task.K, 1.0 / task.K) if priors is None else _check_priors(priors, task.K)
    rng = rng_for(seed, "mixture")
    y = rng.choice(task.K, size=n, p=p)
    x = class_means(task)[y] + rng.standard_normal((n, task.d))
    return ShiftedDataset(x, y.astype(np.int64), ShiftSpec(), seed, p)


def apply_rotation(x, degrees: float) -> np.ndarray:
    """Rotate every coordinate pair (0,1), (2,3), ... by ``degrees``.

    With odd dimension the last coordinate is left as is.
    """
    x = as_matrix(x)
    out = x.copy()
    phi = math.radians(degrees)
    c, s = math.cos(phi), math.sin(phi)
    pairs = x.shape[1] // 2 * 2
    a = x[:, 0:pairs:2]
    b = x[:, 1:pairs:2]
    out[:, 0:pairs:2] = c * a - s * b
    out[:, 1:pairs:2] = s * a + c * b
    return out


def apply_corruption(x, sigma: float, seed: int) -> np.ndarray:
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    x = as_matrix(x)
    if sigma == 0:
        return x.copy()
    return x + sigma * rng_for(seed, "corruption").standard_normal(x.shape)


def draw_label_prior(k: int, alpha: float, seed: int) -> np.ndarray:
    if not alpha > 0:
        raise ConfigError("dirichlet alpha must be > 0")
    p = rng_for(seed, "label_prior").dirichlet(np.full(k, float(alpha)))
    return p / p.sum()


def apply_label_prior(task: TaskSpec, alpha: float, n: int, seed: int) -> ShiftedDataset:
    """Mixture with class proportions drawn from a symmetric Dirichlet."""
    p = draw_label_prior(task.K, alpha, seed)
    ds = gen_gaussian_mixture(task, n, p, seed)
    ds.spec = ShiftSpec(dirichlet_alpha=float(alpha))
    return ds


def adversarial_perturb(space: ParamSpace, spec: ModelSpec, dataset: ShiftedDataset,
                        eps: float) -> ShiftedDataset:
    """One-step sign attack against the given model; labels are kept."""
    if eps < 0:
        raise ConfigError("eps must be >= 0")
    new_spec = replace(dataset.spec, adversarial_eps=float(eps))
    if eps == 0 or len(dataset) == 0:
        return ShiftedDataset(dataset.x.copy(), dataset.y.copy(), new_spec,
                              dataset.provenance_seed, dataset.priors)
    grad = input_grad(space, spec, dataset.batch)
    x = dataset.x + eps * np.sign(grad)
    return ShiftedDataset(x, dataset.y.copy(), new_spec, dataset.provenance_seed, dataset.priors)


# --- the default suite ------------------------------------------------------------

@dataclass(frozen=True)
class SuiteConfig:
    id_rotation: float = 15.0
    near_rotations: Tuple[float, ...] = (30.0, 45.0)
    label_prior_alpha: float = 0.3
    adversarial_eps: float = 0.5
    far_rotation: float = 90.0
    far_rotation_corruption: float = 1.0
    far_corruption: float = 2.0


@dataclass
class Suite:
    task: TaskSpec
    config: SuiteConfig
    datasets: Dict[str, ShiftedDataset]
    # name -> (eps, source dataset name); built per fine-tuned model
    lazy_adversarial: Dict[str, Tuple[float, str]]

    def eval_names(self):
        """ID column first, then every OOD set (lazy ones included), in suite order."""
        names = ["id_val"]
        for name, ds in self.datasets.items():
            if ds.spec.tier != "ID":
                names.append(name)
        names.extend(self.lazy_adversarial)
        return names

    def tier_of(self, name):
        if name in self.lazy_adversarial:
            return "NearOOD"
        return self.datasets[name].spec.tier

    def materialize(self, space: ParamSpace, spec: ModelSpec) -> Dict[str, ShiftedDataset]:
        out = {}
        for name, (eps, source) in self.lazy_adversarial.items():
            ds = adversarial_perturb(space, spec, self.datasets[source], eps)
            ds.spec = replace(ds.spec, tier="NearOOD")
            out[name] = ds
        return out


def _fmt(v):
    return f"{v:g}".replace(".", "p")


def make_suite(task: TaskSpec, config: Optional[SuiteConfig] = None) -> Suite:
    """Pretrain, ID train/val, near-OOD and far-OOD splits for one task seed.

    Each split draws from its own named seed stream, so splits are disjoint
    draws and adding a split never changes another.
    """
    cfg = config or SuiteConfig()
    s = task.seed
    ds = {}

    def mixture(name, n, priors=None):
        return gen_gaussian_mixture(task, n, priors, seed=_split_seed(s, name))

    pre = mixture("pretrain", task.n_pretrain)
    ds["pretrain"] = pre

    for name, n in (("id_train", task.n_id_train), ("id_val", task.n_id_val)):
        d = mixture(name, n)
        d.x = apply_rotation(d.x, cfg.id_rotation)
        d.spec = ShiftSpec("ID", rotation=cfg.id_rotation)
        ds[name] = d

    for rot in cfg.near_rotations:
        name = f"near_rot{_fmt(rot)}"
        d = mixture(name, task.n_test)
        d.x = apply_rotation(d.x, rot)
        d.spec = ShiftSpec("NearOOD", rotation=rot)
        ds[name] = d

    name = f"near_prior{_fmt(cfg.label_prior_alpha)}"
    d = apply_label_prior(task, cfg.label_prior_alpha, task.n_test, _split_seed(s, name))
    d.x = apply_rotation(d.x, cfg.id_rotation)
    d.spec = ShiftSpec("NearOOD", rotation=cfg.id_rotation, dirichlet_alpha=cfg.label_prior_alpha)
    ds[name] = d

    name = f"far_rot{_fmt(cfg.far_rotation)}_noise{_fmt(cfg.far_rotation_corruption)}"
    seed = _split_seed(s, name)
    d = mixture(name, task.n_test)
    d.x = apply_corruption(apply_rotation(d.x, cfg.far_rotation), cfg.far_rotation_corruption, seed)
    d.spec = ShiftSpec("FarOOD", rotation=cfg.far_rotation, corruption=cfg.far_rotation_corruption)
    ds[name] = d

    name = f"far_noise{_fmt(cfg.far_corruption)}"
    seed = _split_seed(s, name)
    d = mixture(name, task.n_test)
    d.x = apply_corruption(apply_rotation(d.x, cfg.id_rotation), cfg.far_corruption, seed)
    d.spec = ShiftSpec("FarOOD", rotation=cfg.id_rotation, corruption=cfg.far_corruption)
    ds[name] = d

    lazy = {f"near_adv{_fmt(cfg.adversarial_eps)}": (cfg.adversarial_eps, "id_val")}
    return Suite(task, cfg, ds, lazy)


def _split_seed(seed, name):
    return int(rng_for(seed, "split", name).integers(0, 2**31 - 1))


# --- CSV import / export --------------------------------------------------------

def export_dataset(ds: ShiftedDataset, path, name: str = "") -> Tuple[Path, Path]:
    """Write ``<path>`` (features + label CSV) and ``<path>.json`` (shift sidecar)."""
    path = Path(path)
    d = ds.x.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + ["label"])
        for row, label in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    sidecar = path.with_name(path.name + ".json")
    meta = {"name": name, "shift": asdict(ds.spec), "kind": ds.spec.kind,
            "seed": int(ds.provenance_seed), "n": len(ds), "d": int(d)}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar


def import_dataset(path) -> ShiftedDataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise ShapeError(f"{path}: expected a header ending in 'label'")
    d = len(rows[0]) - 1
    body = rows[1:]
    x = np.array([[float(v) for v in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    y = np.array([int(r[d]) for r in body], dtype=np.int64)
    spec, seed = ShiftSpec(), 0
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        spec = ShiftSpec(**meta.get("shift", {}))
        seed = int(meta.get("seed", 0))
    return ShiftedDataset(x, y, spec, seed)
