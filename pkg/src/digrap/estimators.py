"""scikit-learn compatible wrappers around the functional core.

``RobustFineTuner`` is a classifier: ``pretrain`` (or the ``init`` parameter)
provides the pre-trained weights, ``fit`` fine-tunes them with the chosen
method, ``transform`` returns penultimate features. ``MahalanobisShiftScorer``
fits a Gaussian to training features and scores shift on new ones.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baselines import DEFAULT_WISE_BETAS, MethodSpec, wise_interpolate
from .exceptions import ConfigError
from .metrics import dataset_shift_score, maha_fit, maha_scores
from .models import ModelSpec, extract_features, predict_logits
from .optim import Schedule
from .paramspace import ParamSpace, capture_snapshot, init_params
from .training import TrainConfig, fit, pretrain


class RobustFineTuner(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Fine-tune a small MLP (or linear) classifier from pre-trained weights.

    Parameters
    ----------
    method : str
        One of ``vanilla, linear_probe, lpft, l2sp, wiseft, digrap,
        full_projection, magproj``.
    mu : float
        Learning rate of the projection strength (``digrap``).
    fixed_omega : float or None
        Pin the projection strength instead of learning it.
    hidden : tuple of int
        Hidden widths; ``()`` gives a linear model.
    init : ParamSpace or None
        Pre-trained weights with a captured snapshot. When absent, ``fit``
        uses the weights from :meth:`pretrain`, or a fresh initialization.
    """

    def __init__(self, method="digrap", mu=0.5, fixed_omega=None, lam=0.01, lp_epochs=None,
                 gamma=1.0, wise_beta=0.5, hidden=(64, 64), epochs=30, batch_size=128, lr=1e-3,
                 schedule="cosine", warmup_frac=0.1, pretrain_epochs=30, init=None,
                 random_state=0):
        self.method = method
        self.mu = mu
        self.fixed_omega = fixed_omega
        self.lam = lam
        self.lp_epochs = lp_epochs
        self.gamma = gamma
        self.wise_beta = wise_beta
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.schedule = schedule
        self.warmup_frac = warmup_frac
        self.pretrain_epochs = pretrain_epochs
        self.init = init
        self.random_state = random_state

    def _train_config(self, epochs):
        sched = Schedule(self.schedule, None, 0.0, self.warmup_frac if self.schedule == "cosine" else 0.0)
        return TrainConfig(epochs=epochs, batch_size=self.batch_size, lr=self.lr, schedule=sched)

    def _method_spec(self):
        betas = DEFAULT_WISE_BETAS if self.method != "wiseft" else (self.wise_beta,)
        return MethodSpec(self.method, lp_epochs=self.lp_epochs, lam=self.lam, betas=betas,
                          mu=self.mu, fixed_omega=self.fixed_omega, gamma=self.gamma)

    def _model_spec(self, d, k):
        if self.hidden:
            return ModelSpec.mlp(d, tuple(self.hidden), k)
        return ModelSpec.linear(d, k)

    def _encode(self, y):
        check_classification_targets(y)
        classes = np.unique(y)
        return classes, np.searchsorted(classes, y)

    def pretrain(self, X, y):
        """Train the reference weights on ``(X, y)`` and capture them as the snapshot."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, yi = self._encode(y)
        self.n_features_in_ = X.shape[1]
        spec = self._model_spec(X.shape[1], len(self.classes_))
        self.pretrained_ = pretrain(spec, X, yi, self._train_config(self.pretrain_epochs),
                                    seed=self.random_state)
        return self

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        theta0 = self.init if self.init is not None else getattr(self, "pretrained_", None)
        if theta0 is not None and (not isinstance(theta0, ParamSpace) or not theta0.has_snapshot):
            raise ConfigError("init must be a ParamSpace with a captured snapshot")
        if self.init is not None or not hasattr(self, "pretrained_"):
            self.classes_ = np.unique(y)
        yi = np.searchsorted(self.classes_, y)
        if np.any(yi >= len(self.classes_)) or np.any(self.classes_[np.minimum(yi, len(self.classes_) - 1)] != y):
            raise ValueError("y contains labels unseen during pre-training")
        self.n_features_in_ = X.shape[1]
        spec = self._model_spec(X.shape[1], len(self.classes_))
        if theta0 is None:
            theta0 = capture_snapshot(init_params(spec.layer_sizes, self.random_state))
        val = {}
        if X_val is not None:
            X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64)
            val = {"x_val": X_val, "y_val": np.searchsorted(self.classes_, y_val)}
        res = fit(theta0, spec, X, yi, self._method_spec(), self._train_config(self.epochs),
                  seed=self.random_state, **val)
        space = res.space
        if self.method == "wiseft":
            space = wise_interpolate(theta0, space, self.wise_beta)
        self.spec_ = spec
        self.space_ = space
        self.best_epoch_ = res.best_epoch
        self.val_history_ = res.val_history
        self.omega_trace_ = np.asarray(res.mean_omega)
        self.step_trace_ = res.trace
        return self

    def decision_function(self, X):
        check_is_fitted(self, "space_")
        X = check_array(X, dtype=np.float64)
        return predict_logits(self.space_, self.spec_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self.decision_function(X)
        return self.classes_[np.argmax(z, axis=1)]

    def transform(self, X):
        """Penultimate-layer features."""
        check_is_fitted(self, "space_")
        X = check_array(X, dtype=np.float64)
        return extract_features(self.space_, self.spec_, X)


class MahalanobisShiftScorer(BaseEstimator):
    """Gaussian fit to training features; larger distance means more shift.

    ``score_samples`` follows the scikit-learn outlier convention (higher is
    more normal) and returns the negated distance.
    """

    def __init__(self, ridge=None):
        self.ridge = ridge

    def fit(self, Z, y=None):
        Z = check_array(Z, dtype=np.float64)
        self.model_ = maha_fit(Z, self.ridge)
        self.location_ = self.model_.mean
        self.ridge_ = self.model_.ridge
        self.n_features_in_ = Z.shape[1]
        return self

    def distance(self, Z):
        check_is_fitted(self, "model_")
        return maha_scores(self.model_, check_array(Z, dtype=np.float64))

    def score_samples(self, Z):
        return -self.distance(Z)

    def shift_score(self, Z):
        """Mean distance over the samples of ``Z``."""
        check_is_fitted(self, "model_")
        return dataset_shift_score(self.model_, check_array(Z, dtype=np.float64)).mean
