"""Pretrain -> fine-tune every method -> evaluate the shift suite, per seed."""
from __future__ import annotations

import logging
import traceback
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..baselines import MethodSpec, wise_interpolate
from ..metrics import delta_stats, dataset_shift_score, maha_fit
from ..models import extract_features
from ..paramspace import ParamSpace
from ..projection import TraceRow
from ..shiftlab import Suite, make_suite
from ..training import FitResult, evaluate, fit, pretrain
from .config import RunConfig

log = logging.getLogger(__name__)

VANILLA = "VanillaFT"


@dataclass
class Cell:
    method: str
    seed: int
    status: str = "ok"
    accuracies: Dict[str, float] = field(default_factory=dict)
    best_epoch: int = -1
    val_history: List[float] = field(default_factory=list)
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"


@dataclass
class RunResult:
    config: RunConfig
    datasets: List[str]
    tiers: Dict[str, str]
    cells: List[Cell]
    omega: Dict[Tuple[str, int], List[float]] = field(default_factory=dict)
    traces: Dict[Tuple[str, int], List[TraceRow]] = field(default_factory=dict)
    # seed -> dataset -> per-sample scores
    shift_scores: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def run_id(self):
        return self.config.run_id

    @property
    def failed(self):
        return [c for c in self.cells if not c.ok]

    @property
    def ood_names(self):
        return [d for d in self.datasets if self.tiers[d] != "ID"]

    def method_labels(self):
        seen = []
        for c in self.cells:
            if c.method not in seen:
                seen.append(c.method)
        return seen

    def cell(self, method, seed) -> Optional[Cell]:
        for c in self.cells:
            if c.method == method and c.seed == seed:
                return c
        return None

    def ood_avg(self, cell: Cell) -> float:
        """Unweighted mean over every non-ID dataset."""
        return float(np.mean([cell.accuracies[d] for d in self.ood_names]))

    def summary(self) -> Dict[str, dict]:
        """Per-method mean/std over successful seeds plus deltas vs vanilla."""
        out = {}
        for m in self.method_labels():
            cells = [c for c in self.cells if c.method == m and c.ok]
            if not cells:
                out[m] = {"n_seeds": 0}
                continue
            per_ds = {d: [c.accuracies[d] for c in cells] for d in self.datasets}
            ood = [self.ood_avg(c) for c in cells]
            out[m] = {
                "n_seeds": len(cells),
                "mean": {d: float(np.mean(v)) for d, v in per_ds.items()},
                "std": {d: float(np.std(v)) for d, v in per_ds.items()},
                "id": float(np.mean(per_ds["id_val"])),
                "ood_avg": float(np.mean(ood)),
                "ood_avg_std": float(np.std(ood)),
            }
        base = out.get(VANILLA)
        for m, s in out.items():
            if not s.get("n_seeds") or not base or not base.get("n_seeds"):
                s["id_delta_pct"] = s["ood_delta_pct"] = None
                continue
            ds = delta_stats(s["id"], s["ood_avg"], base["id"], base["ood_avg"])
            s["id_delta_pct"], s["ood_delta_pct"] = ds.id_delta_pct, ds.ood_delta_pct
        return out

    def shift_means(self) -> Dict[int, Dict[str, float]]:
        return {s: {d: float(v.mean()) for d, v in per.items()} for s, per in self.shift_scores.items()}


def _evaluate_all(space, spec, suite: Suite) -> Dict[str, float]:
    lazy = suite.materialize(space, spec)
    acc = {}
    for name in suite.eval_names():
        ds = lazy[name] if name in lazy else suite.datasets[name]
        acc[name] = evaluate(space, spec, ds.x, ds.y)
    return acc


def _fit_method(theta0, spec, suite, method: MethodSpec, cfg: RunConfig, seed) -> FitResult:
    tr, va = suite.datasets["id_train"], suite.datasets["id_val"]
    return fit(theta0, spec, tr.x, tr.y, method, cfg.train, seed=seed, x_val=va.x, y_val=va.y)


def run_seed(cfg: RunConfig, seed: int, result: RunResult, suite: Optional[Suite] = None):
    """Everything for one seed; depends on nothing but (config, seed)."""
    task = replace(cfg.task, seed=seed)
    suite = suite or make_suite(task, cfg.suite)
    spec = cfg.model_spec()
    pre = suite.datasets["pretrain"]
    theta0 = pretrain(spec, pre.x, pre.y, cfg.pretrain_config(), seed=_stream(seed, 1))
    ft_seed = _stream(seed, 2)

    vanilla_space: Optional[ParamSpace] = None
    for method in cfg.methods:
        labels = _labels(method)
        try:
            res = _fit_method(theta0, spec, suite, method, cfg, ft_seed)
            if method.kind == "vanilla":
                vanilla_space = res.space
            if method.kind == "wiseft":
                for beta, label in zip(method.betas, labels):
                    space = wise_interpolate(theta0, res.space, beta)
                    result.cells.append(Cell(label, seed, "ok", _evaluate_all(space, spec, suite),
                                             res.best_epoch, res.val_history))
                continue
            cell = Cell(labels[0], seed, "ok", _evaluate_all(res.space, spec, suite),
                        res.best_epoch, res.val_history)
            result.cells.append(cell)
            if res.mean_omega:
                result.omega[(labels[0], seed)] = res.mean_omega
                result.traces[(labels[0], seed)] = res.trace
        except Exception as exc:  # a failed cell never aborts the grid
            log.warning("cell %s seed=%d failed: %s", labels, seed, exc)
            for label in labels:
                result.cells.append(Cell(label, seed, "failed", error=_short_tb(exc)))

    try:
        if vanilla_space is None:
            vanilla_space = _fit_method(theta0, spec, suite, MethodSpec("vanilla"), cfg, ft_seed).space
        result.shift_scores[seed] = shift_scores(vanilla_space, spec, suite)
    except Exception as exc:
        log.warning("shift scoring for seed=%d failed: %s", seed, exc)
        result.cells.append(Cell("shift-score", seed, "failed", error=_short_tb(exc)))


def shift_scores(encoder: ParamSpace, spec, suite: Suite) -> Dict[str, np.ndarray]:
    """Per-sample Mahalanobis scores of every suite split under ``encoder``."""
    tr = suite.datasets["id_train"]
    model = maha_fit(extract_features(encoder, spec, tr.batch))
    out = {}
    all_sets = dict(suite.datasets)
    all_sets.update(suite.materialize(encoder, spec))
    for name, ds in all_sets.items():
        out[name] = dataset_shift_score(model, extract_features(encoder, spec, ds.batch)).per_sample
    return out


def run_experiment(cfg: RunConfig) -> RunResult:
    probe = make_suite(replace(cfg.task, seed=cfg.seeds[0]), cfg.suite)
    names = probe.eval_names()
    result = RunResult(cfg, names, {n: probe.tier_of(n) for n in names}, [])
    for i, seed in enumerate(cfg.seeds):
        log.info("seed %d (%d/%d)", seed, i + 1, len(cfg.seeds))
        run_seed(cfg, seed, result, probe if i == 0 else None)
    return result


def _labels(method: MethodSpec):
    if method.kind == "wiseft":
        return [f"WiSEFT(beta={b:g})" for b in method.betas]
    return [method.label]


def _stream(seed, k):
    return int(seed) * 1000 + k


def _short_tb(exc):
    return "".join(traceback.format_exception_only(type(exc), exc)).strip()
