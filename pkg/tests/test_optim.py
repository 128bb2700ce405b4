import math

import numpy as np
import pytest

from digrap.exceptions import ConfigError, NumericError, StateError
from digrap.optim import AdamState, OptimConfig, Schedule, adam_step, l2sp_grad, schedule_lr, sgd_step
from digrap.paramspace import ParamGroup, ParamSpace, capture_snapshot


def _space(vals):
    return ParamSpace([ParamGroup("w", (len(vals),), np.array(vals, dtype=float))])


def _scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


def test_adam_matches_scalar_reference():
    grads = [0.3, -1.2, 0.05, 2.0, -0.7]
    s = _space([1.0, -2.0])
    st = AdamState.for_space(s)
    for g in grads:
        adam_step(s, st, {"w": np.array([g, -g])}, 0.01)
    assert s["w"].values[0] == pytest.approx(_scalar_adam(1.0, grads, 0.01), abs=1e-15)
    assert s["w"].values[1] == pytest.approx(_scalar_adam(-2.0, [-g for g in grads], 0.01), abs=1e-15)
    assert st.t == len(grads)


def test_first_adam_step_is_sign_step():
    s = _space([0.0, 0.0, 0.0])
    adam_step(s, AdamState.for_space(s), {"w": np.array([3.0, -1e-3, 0.0])}, 0.1)
    assert s["w"].values == pytest.approx([-0.1, 0.1, 0.0], abs=1e-6)


def test_adam_is_transactional():
    s = _space([1.0, 2.0])
    st = AdamState.for_space(s)
    adam_step(s, st, {"w": np.array([1.0, 1.0])}, 0.1)
    vals, m = s["w"].values.copy(), st.m["w"].copy()
    with pytest.raises(NumericError):
        adam_step(s, st, {"w": np.array([np.inf, 1.0])}, 0.1)
    assert np.array_equal(s["w"].values, vals)
    assert np.array_equal(st.m["w"], m) and st.t == 1


def test_frozen_groups_untouched():
    s = ParamSpace([ParamGroup("a", (1,), [1.0]), ParamGroup("b", (1,), [1.0], trainable=False)])
    st = AdamState.for_space(s)
    adam_step(s, st, {"a": np.array([1.0]), "b": np.array([np.nan])}, 0.1)
    assert s["b"].values[0] == 1.0 and s["a"].values[0] < 1.0
    sgd_step(s, {"a": np.array([1.0]), "b": np.array([1.0])}, 0.5)
    assert s["b"].values[0] == 1.0


def test_l2sp_grad():
    s = capture_snapshot(_space([1.0, 2.0]))
    s["w"].values[:] = [2.0, 0.0]
    g = l2sp_grad(s, {"w": np.array([0.5, 0.5])}, 0.1)
    assert g["w"] == pytest.approx([0.6, 0.3])
    with pytest.raises(StateError):
        l2sp_grad(_space([1.0]), {"w": np.zeros(1)}, 0.1)
    with pytest.raises(ConfigError):
        l2sp_grad(s, {"w": np.zeros(2)}, -1)


def test_cosine_schedule_points():
    cfg = OptimConfig(lr=1.0, schedule=Schedule("cosine", warmup_steps=10, min_lr=0.1))
    assert schedule_lr(cfg, 0, 110) == 0.0
    assert schedule_lr(cfg, 5, 110) == 0.5
    assert schedule_lr(cfg, 10, 110) == 1.0
    assert schedule_lr(cfg, 60, 110) == pytest.approx(0.55)
    assert schedule_lr(cfg, 110, 110) == pytest.approx(0.1)
    lrs = [schedule_lr(cfg, t, 110) for t in range(10, 111)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_warmup_fraction_and_constant():
    sch = Schedule("cosine", warmup_frac=0.1)
    assert sch.warmup_for(600) == 60
    cfg = OptimConfig(lr=2e-3, schedule=Schedule("constant"))
    assert schedule_lr(cfg, 37, 100) == 2e-3
    full = OptimConfig(lr=1.0, schedule=Schedule("cosine", warmup_steps=5))
    assert schedule_lr(full, 5, 5) == 1.0


@pytest.mark.parametrize("kw", [dict(kind="step"), dict(warmup_steps=-1), dict(warmup_frac=2.0),
                                dict(min_lr=-1.0)])
def test_schedule_validation(kw):
    with pytest.raises(ConfigError):
        Schedule(**kw)


def test_optim_config_validation():
    with pytest.raises(ConfigError):
        OptimConfig(lr=0.0)
    with pytest.raises(ConfigError):
        OptimConfig(lr=0.1, schedule=Schedule(min_lr=0.2))
    with pytest.raises(ConfigError):
        schedule_lr(OptimConfig(), 11, 10)
