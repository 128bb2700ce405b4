"""Accuracy, relative-change statistics, Mahalanobis shift scores, omega smoothing."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg

from ._validation import as_matrix, as_vector
from .exceptions import ConfigError, NumericError, ShapeError


def accuracy(pred, true) -> float:
    pred = np.asarray(pred).reshape(-1)
    true = np.asarray(true).reshape(-1)
    if pred.shape != true.shape:
        raise ShapeError("prediction and label lengths differ")
    if pred.size == 0:
        raise ConfigError("accuracy of an empty set is undefined")
    return float(np.mean(pred == true))


class DeltaStats(NamedTuple):
    id_delta_pct: float
    ood_delta_pct: float


def delta_stats(method_id, method_ood_avg, vanilla_id, vanilla_ood_avg) -> DeltaStats:
    """Percent change of a method's ID and OOD-average accuracy over vanilla fine-tuning."""
    if vanilla_id <= 0 or vanilla_ood_avg <= 0:
        raise ConfigError("vanilla accuracies must be > 0")
    return DeltaStats(
        100.0 * (method_id - vanilla_id) / vanilla_id,
        100.0 * (method_ood_avg - vanilla_ood_avg) / vanilla_ood_avg,
    )


@dataclass(frozen=True)
class MahaModel:
    mean: np.ndarray
    chol: np.ndarray
    ridge: float
    n_fit: int

    @property
    def dim(self):
        return self.mean.shape[0]


def default_ridge(cov) -> float:
    d = cov.shape[0]
    return max(1e-3 * float(np.trace(cov)) / d, 1e-12)


def maha_fit(features, ridge: Optional[float] = None) -> MahaModel:
    """Mean, unbiased covariance and its ridge-regularized Cholesky factor.

    ``ridge=None`` uses ``1e-3 * trace(cov) / d``.
    """
    z = as_matrix(features, "features")
    n, d = z.shape
    if n < 2:
        raise ConfigError("need at least 2 samples to fit a covariance")
    if n < d + 1:
        warnings.warn(f"fitting a {d}-dim covariance on only {n} samples", stacklevel=2)
    mu = z.mean(axis=0)
    cov = np.atleast_2d(np.cov(z, rowvar=False, ddof=1))
    if ridge is None:
        ridge = default_ridge(cov)
    elif not ridge > 0:
        raise ConfigError("ridge must be > 0")
    try:
        chol = linalg.cholesky(cov + ridge * np.eye(d), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericError(f"covariance factorization failed; raise the ridge ({exc})") from exc
    return MahaModel(mu, chol, float(ridge), n)


def maha_scores(model: MahaModel, features) -> np.ndarray:
    z = as_matrix(features, "features")
    if z.shape[1] != model.dim:
        raise ShapeError(f"feature dim {z.shape[1]} != model dim {model.dim}")
    if z.shape[0] == 0:
        return np.zeros(0)
    w = linalg.solve_triangular(model.chol, (z - model.mean).T, lower=True)
    return np.sqrt(np.einsum("ij,ij->j", w, w))


def maha_score(model: MahaModel, z) -> float:
    z = as_vector(z, "z")
    return float(maha_scores(model, z[None, :])[0])


class ShiftScore(NamedTuple):
    mean: float
    per_sample: np.ndarray


def dataset_shift_score(model: MahaModel, features) -> ShiftScore:
    s = maha_scores(model, features)
    if s.size == 0:
        raise ConfigError("need at least one sample")
    return ShiftScore(float(s.mean()), s)


def omega_windows(trace, window: int) -> np.ndarray:
    """Trailing moving average; output length is ``len(trace) - window + 1``."""
    x = as_vector(trace, "trace")
    if window < 1:
        raise ConfigError("window must be >= 1")
    if window > x.size:
        raise ConfigError(f"window {window} exceeds trace length {x.size}")
    if window == 1:
        return x.copy()
    c = np.concatenate(([0.0], np.cumsum(x)))
    return (c[window:] - c[:-window]) / window


def window_trend(trace, window: int, frac: float = 0.1) -> Tuple[float, float]:
    """Mean of the ``window``-step moving averages lying wholly inside the
    first and the last ``frac`` of the trace. Returns ``(early, late)``."""
    x = as_vector(trace, "trace")
    if not 0.0 < frac <= 0.5:
        raise ConfigError("frac must lie in (0, 0.5]")
    seg = int(math.floor(frac * x.size))
    if seg < window:
        raise ConfigError(f"{frac:g} of {x.size} steps is shorter than the window {window}")
    early = omega_windows(x[:seg], window)
    late = omega_windows(x[x.size - seg:], window)
    return float(early.mean()), float(late.mean())
