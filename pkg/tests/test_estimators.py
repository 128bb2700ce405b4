import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from digrap.estimators import MahalanobisShiftScorer, RobustFineTuner
from digrap.exceptions import ConfigError
from digrap.shiftlab import TaskSpec, make_suite

TASK = TaskSpec(d=6, K=3, n_pretrain=300, n_id_train=120, n_id_val=90, n_test=60, seed=1)


@pytest.fixture(scope="module")
def data():
    return make_suite(TASK).datasets


def _est(**kw):
    base = dict(hidden=(16,), epochs=3, pretrain_epochs=4, batch_size=32, lr=1e-2)
    base.update(kw)
    return RobustFineTuner(**base)


def test_params_round_trip():
    est = _est(mu=0.1)
    assert est.get_params()["mu"] == 0.1
    c = clone(est.set_params(method="l2sp"))
    assert c.method == "l2sp" and c.mu == 0.1


def test_pretrain_then_fit_with_string_labels(data):
    pre, tr, va = data["pretrain"], data["id_train"], data["id_val"]
    names = np.array(["cat", "dog", "eel"])
    est = _est().pretrain(pre.x, names[pre.y])
    est.fit(tr.x, names[tr.y], va.x, names[va.y])
    pred = est.predict(va.x)
    assert set(pred) <= set(names)
    assert est.score(va.x, names[va.y]) > 0.5
    p = est.predict_proba(va.x)
    assert np.allclose(p.sum(1), 1.0) and p.shape == (90, 3)
    assert est.transform(va.x).shape == (90, 16)
    assert est.omega_trace_[0] == 0.0 and len(est.val_history_) == 3
    with pytest.raises(ValueError):
        est.fit(tr.x, np.array(["cat", "dog", "fox"])[tr.y])


def test_init_param_and_methods(data):
    pre, tr = data["pretrain"], data["id_train"]
    theta0 = _est().pretrain(pre.x, pre.y).pretrained_
    for method in ("vanilla", "wiseft", "lpft"):
        est = _est(method=method, init=theta0).fit(tr.x, tr.y)
        assert est.predict(tr.x).shape == (120,)
    with pytest.raises(ConfigError):
        _est(init=object()).fit(tr.x, tr.y)


def test_not_fitted_and_validation(data):
    with pytest.raises(NotFittedError):
        _est().predict(data["id_val"].x)
    with pytest.raises(ValueError):
        _est().fit(np.zeros((3, 6)), [0, 1])


def test_shift_scorer(data):
    sc = MahalanobisShiftScorer().fit(data["id_train"].x)
    near = sc.shift_score(data["id_val"].x)
    far = sc.shift_score(data["far_noise2"].x)
    assert near < far
    s = sc.score_samples(data["id_val"].x)
    assert np.allclose(s, -sc.distance(data["id_val"].x)) and s.shape == (90,)
    with pytest.raises(NotFittedError):
        MahalanobisShiftScorer().distance(data["id_val"].x)
