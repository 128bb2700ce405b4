"""Result files. Schemas are versioned through ``SCHEMA_VERSION``."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

from ..projection import write_trace_csv
from .runner import RunResult

SCHEMA_VERSION = 1
RESULTS_HEADER = ["method", "seed", "dataset", "accuracy"]
DELTAS_HEADER = ["method", "n_seeds", "id_accuracy", "ood_avg", "id_delta_pct", "ood_delta_pct"]
SHIFT_HEADER = ["seed", "dataset", "sample_index", "s_maha"]


def _num(x):
    return "" if x is None else repr(float(x))


def _pct(x):
    return "" if x is None else f"{x:.2f}"


def safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_results(res: RunResult, out_dir) -> dict:
    """Write every output file and return ``{kind: path}``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {}
    summary = res.summary()

    p = out / "results.csv"
    with _open(p) as fh:
        w = _writer(fh)
        w.writerow(RESULTS_HEADER)
        for c in res.cells:
            if c.ok:
                for d in res.datasets:
                    w.writerow([c.method, c.seed, d, _num(c.accuracies[d])])
    paths["results"] = p

    p = out / "deltas.csv"
    with _open(p) as fh:
        w = _writer(fh)
        w.writerow(DELTAS_HEADER)
        for m, s in summary.items():
            if not s.get("n_seeds"):
                w.writerow([m, 0, "", "", "", ""])
                continue
            w.writerow([m, s["n_seeds"], _num(s["id"]), _num(s["ood_avg"]),
                        _pct(s["id_delta_pct"]), _pct(s["ood_delta_pct"])])
    paths["deltas"] = p

    for (method, seed), rows in res.traces.items():
        p = out / f"omega_trace_{safe_name(method)}_{seed}.csv"
        try:
            write_trace_csv(rows, p)
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        paths[f"omega_trace:{method}:{seed}"] = p

    p = out / "shift_scores.csv"
    with _open(p) as fh:
        w = _writer(fh)
        w.writerow(SHIFT_HEADER)
        for seed, per in res.shift_scores.items():
            for name, scores in per.items():
                for i, s in enumerate(scores):
                    w.writerow([seed, name, i, _num(s)])
    paths["shift_scores"] = p

    p = out / "summary.json"
    doc = {
        "schema_version": SCHEMA_VERSION,
        "run_id": res.run_id,
        "config": res.config.canonical(),
        "seeds": list(res.config.seeds),
        "datasets": [{"name": d, "tier": res.tiers[d]} for d in res.datasets],
        "methods": summary,
        "cells": [
            {"method": c.method, "seed": c.seed, "status": c.status, "accuracies": c.accuracies,
             "best_epoch": c.best_epoch, "val_history": c.val_history, "error": c.error}
            for c in res.cells
        ],
        "omega_mean_trace": [
            {"method": m, "seed": s, "mean_omega": v} for (m, s), v in res.omega.items()
        ],
        "shift_score_means": {str(s): v for s, v in res.shift_means().items()},
        "failed_cells": len(res.failed),
    }
    with _open(p) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    paths["summary"] = p
    return paths


class _open:
    """UTF-8 text file whose IO errors name the path."""

    def __init__(self, path):
        self.path = path

    def __enter__(self):
        try:
            self.fh = open(self.path, "w", newline="", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {self.path}: {exc}") from exc
        return self.fh

    def __exit__(self, *exc):
        self.fh.close()
        return False
