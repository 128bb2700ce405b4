"""Flat ``key=value`` run configuration.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Unknown keys are rejected so a typo never silently falls back to a default.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..baselines import DEFAULT_WISE_BETAS, METHOD_KINDS, MethodSpec
from ..exceptions import ConfigError
from ..models import ModelSpec
from ..optim import Schedule
from ..shiftlab import SuiteConfig, TaskSpec
from ..training import TrainConfig

MU_SWEEP = (0.01, 0.1, 0.5, 1.0, 100.0)


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _ints(v):
    return tuple(int(p) for p in _split(v))


def _floats(v):
    return tuple(float(p) for p in _split(v))


def _strs(v):
    return tuple(_split(v))


def _opt_int(v):
    return None if v.strip().lower() in ("", "none", "auto") else int(v)


def _split(v):
    return [p.strip() for p in v.split(",") if p.strip()]


# key -> (parser, default, help)
KEYS: Dict[str, tuple] = {
    "d": (_int, 16, "input dimension"),
    "K": (_int, 8, "number of classes"),
    "n_pretrain": (_int, 8000, "pre-training samples"),
    "n_id_train": (_int, 2560, "ID fine-tuning samples"),
    "n_id_val": (_int, 1000, "ID validation samples (the ID column)"),
    "n_test": (_int, 1000, "samples per OOD set"),
    "radius": (_float, 4.0, "class-mean sphere radius"),
    "hidden": (_ints, (64, 64), "MLP hidden widths; empty for a linear model"),
    "epochs": (_int, 30, "fine-tuning epochs"),
    "pretrain_epochs": (_int, 30, "pre-training epochs"),
    "batch_size": (_int, 128, "mini-batch size"),
    "lr": (_float, 1e-3, "peak learning rate"),
    "schedule": (str, "cosine", "constant | cosine (linear warmup + cosine decay)"),
    "warmup_frac": (_float, 0.1, "warmup length as a fraction of steps"),
    "warmup_steps": (_opt_int, None, "explicit warmup steps (overrides warmup_frac)"),
    "min_lr": (_float, 0.0, "final learning rate of the cosine schedule"),
    "methods": (_strs, ("vanilla", "digrap"), "comma list of " + ", ".join(METHOD_KINDS)),
    "mu": (_floats, (0.5,), "omega learning rates; one DiGraP row per value"),
    "fixed_omega": (_floats, (), "fixed projection strengths; one DiGraP row per value"),
    "lambda_l2sp": (_floats, (0.01,), "L2-SP strengths; one row per value"),
    "lp_epochs": (_opt_int, None, "LP-FT probe epochs (default 20% of epochs)"),
    "wise_betas": (_floats, DEFAULT_WISE_BETAS, "WiSE-FT interpolation weights"),
    "mag_gamma": (_floats, (1.0,), "magnitude-projection radii; one row per value"),
    "seeds": (_ints, (0,), "comma list of seeds"),
    "output_dir": (str, "results", "output directory"),
    "id_rotation": (_float, 15.0, "ID rotation (degrees)"),
    "near_rotations": (_floats, (30.0, 45.0), "near-OOD rotations (degrees)"),
    "label_prior_alpha": (_float, 0.3, "Dirichlet concentration of the label-prior shift"),
    "adversarial_eps": (_float, 0.5, "sign-attack radius"),
    "far_rotation": (_float, 90.0, "far-OOD rotation (degrees)"),
    "far_rotation_corruption": (_float, 1.0, "noise added on top of the far rotation"),
    "far_corruption": (_float, 2.0, "noise of the far corruption set"),
}

SUITE_KEYS = ("id_rotation", "near_rotations", "label_prior_alpha", "adversarial_eps",
              "far_rotation", "far_rotation_corruption", "far_corruption")


def parse_value(key, raw):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    parser = KEYS[key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def parse_lines(text: str, source="<config>") -> Dict[str, object]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


@dataclass
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    hidden: Tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain_epochs: int = 30
    methods: List[MethodSpec] = field(default_factory=lambda: [MethodSpec("vanilla"), MethodSpec("digrap")])
    seeds: Tuple[int, ...] = (0,)
    output_dir: str = "results"
    suite: SuiteConfig = field(default_factory=SuiteConfig)

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.pretrain_epochs < 1:
            raise ConfigError("pretrain_epochs must be >= 1")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate method rows: {labels}")

    def model_spec(self) -> ModelSpec:
        if self.hidden:
            return ModelSpec.mlp(self.task.d, self.hidden, self.task.K)
        return ModelSpec.linear(self.task.d, self.task.K)

    def pretrain_config(self) -> TrainConfig:
        return replace(self.train, epochs=self.pretrain_epochs)

    def canonical(self) -> dict:
        """Seed- and output-independent description used for the run id."""
        d = {
            "task": asdict(replace(self.task, seed=0)),
            "hidden": list(self.hidden),
            "train": asdict(self.train),
            "pretrain_epochs": self.pretrain_epochs,
            "methods": [asdict(m) for m in self.methods],
            "suite": asdict(self.suite),
        }
        return json.loads(json.dumps(d, sort_keys=True))

    @property
    def run_id(self) -> str:
        blob = json.dumps({**self.canonical(), "seeds": list(self.seeds)}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def build_methods(values) -> List[MethodSpec]:
    methods = []
    for kind in values["methods"]:
        if kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method {kind!r}; expected one of {METHOD_KINDS}")
        if kind == "digrap":
            methods += [MethodSpec("digrap", mu=m) for m in values["mu"]]
            methods += [MethodSpec("digrap", fixed_omega=w) for w in values["fixed_omega"]]
        elif kind == "l2sp":
            methods += [MethodSpec("l2sp", lam=lam) for lam in values["lambda_l2sp"]]
        elif kind == "magproj":
            methods += [MethodSpec("magproj", gamma=g) for g in values["mag_gamma"]]
        elif kind == "lpft":
            methods.append(MethodSpec("lpft", lp_epochs=values["lp_epochs"]))
        elif kind == "wiseft":
            methods.append(MethodSpec("wiseft", betas=values["wise_betas"]))
        else:
            methods.append(MethodSpec(kind))
    return methods


def build_config(values: Dict[str, object]) -> RunConfig:
    v = {k: spec[1] for k, spec in KEYS.items()}
    v.update(values)
    task = TaskSpec(d=v["d"], K=v["K"], n_pretrain=v["n_pretrain"], n_id_train=v["n_id_train"],
                    n_id_val=v["n_id_val"], n_test=v["n_test"], radius=v["radius"])
    sched = Schedule(v["schedule"], v["warmup_steps"], v["min_lr"], v["warmup_frac"])
    train = TrainConfig(epochs=v["epochs"], batch_size=v["batch_size"], lr=v["lr"], schedule=sched)
    if v["min_lr"] > v["lr"]:
        raise ConfigError("min_lr must not exceed lr")
    suite = SuiteConfig(**{k: v[k] for k in SUITE_KEYS})
    return RunConfig(task, tuple(v["hidden"]), train, v["pretrain_epochs"], build_methods(v),
                     tuple(v["seeds"]), v["output_dir"], suite)


def parse_config(path: Optional[str] = None, overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Read ``path`` (if any), apply already-parsed ``overrides``, build the config."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        values.update(parse_lines(p.read_text(encoding="utf-8"), str(p)))
    for k, val in (overrides or {}).items():
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = val
    return build_config(values)


def help_text():
    lines = ["config keys (key=value, defaults in brackets):"]
    for k, (_, default, desc) in KEYS.items():
        if isinstance(default, tuple):
            default = ",".join(str(x) for x in default)
        lines.append(f"  {k:24s} {desc} [{default}]")
    return "\n".join(lines)
