import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from digrap.exceptions import ConfigError, NumericError, StateError
from digrap.models import loss_and_grad
from digrap.optim import AdamState, adam_step
from digrap.paramspace import capture_snapshot
from digrap.projection import (DigrapConfig, DigrapLayerState, DigrapOptimizer, TRACE_HEADER,
                               digrap_step, equivalent_lambda, hypergrad_omega, init_states,
                               omega_update, project_gradient, write_trace_csv)

# magnitudes below ~1e-150 make the norms in the scale factor underflow
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False).filter(
    lambda x: x == 0.0 or abs(x) > 1e-100)
vec = arrays(np.float64, 8, elements=finite)


@settings(max_examples=300, deadline=None)
@given(vec, vec, st.floats(0.0, 1.0))
def test_projection_properties(g1, g2, omega):
    r = project_gradient(g1, g2, omega)
    scale = np.linalg.norm(g1) * np.linalg.norm(g2)
    if not r.conflicting or omega == 0.0:
        assert r.g is g1
        return
    assert np.dot(r.g, g2) == pytest.approx((1 - omega) * np.dot(g1, g2), abs=1e-11 * scale)
    # the removed part is parallel to g2
    removed = g1 - r.g
    assert abs(np.dot(removed, g2)) == pytest.approx(np.linalg.norm(removed) * np.linalg.norm(g2),
                                                     rel=1e-9, abs=1e-9 * scale)
    lam = equivalent_lambda(r.dot, r.norm_sq, omega, True)
    assert lam >= 0
    assert np.allclose(r.g, g1 + lam * g2, rtol=0, atol=1e-11 * (np.abs(g1).max() + lam * np.abs(g2).max()))


@settings(max_examples=200, deadline=None)
@given(vec, vec)
def test_full_projection_is_orthogonal(g1, g2):
    r = project_gradient(g1, g2, 1.0)
    if r.conflicting:
        assert abs(np.dot(r.g, g2)) <= 1e-10 * np.linalg.norm(g1) * np.linalg.norm(g2)


def test_zero_reference_gradient_is_non_conflicting():
    r = project_gradient([1.0, -2.0], [0.0, 0.0], 1.0)
    assert not r.conflicting and np.all(r.proj == 0)
    r = project_gradient([1.0, -2.0], [1e-7, 0.0], 1.0)
    assert not r.conflicting


def test_projection_worked_example():
    r = project_gradient([1.0, 1.0], [-1.0, 0.0], 0.5)
    assert r.conflicting and r.dot == -1.0 and r.norm_sq == 1.0
    assert r.g.tolist() == [0.5, 1.0]
    assert equivalent_lambda(r.dot, r.norm_sq, 0.5, True) == 0.5


def test_projection_validation():
    with pytest.raises(ConfigError):
        project_gradient([1.0], [1.0], 1.5)
    with pytest.raises(ValueError):
        project_gradient([1.0], [1.0, 2.0], 0.5)


def test_hypergrad_normalization():
    raw, norm = hypergrad_omega([3.0, 0.0], [-2.0, 0.0], 0.1)
    assert raw == pytest.approx(-0.6)
    assert norm == pytest.approx(-0.6 / (0.6 + 1e-12), abs=1e-15)
    raw, norm = hypergrad_omega([1.0, 1.0], [0.0, 0.0], 0.1)
    assert raw == 0.0 and norm == 0.0


def test_first_omega_update_moves_by_mu():
    # grad -0.2: m_hat = -0.2, v_hat = 0.04, step = mu * 0.2 / (0.2 + eps)
    s = DigrapLayerState.for_size(1)
    omega_update(s, -0.2, DigrapConfig(mu=0.1), t=2)
    assert s.omega == pytest.approx(0.1 * 0.2 / (0.2 + 1e-8), abs=1e-16)
    s2 = DigrapLayerState.for_size(1)
    omega_update(s2, 0.2, DigrapConfig(mu=0.1), t=2)
    assert s2.omega == 0.0
    with pytest.raises(StateError):
        omega_update(DigrapLayerState.for_size(1), 0.1, DigrapConfig(), t=1)


def test_omega_update_sequence_against_hand_adam():
    grads = [-0.5, -0.1, 0.3, -1.0]
    cfg = DigrapConfig(mu=0.05)
    s = DigrapLayerState.for_size(1)
    w, m, v = 0.0, 0.0, 0.0
    for k, g in enumerate(grads, 1):
        omega_update(s, g, cfg, t=k + 1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = min(1.0, max(0.0, w - 0.05 * (m / (1 - 0.9**k)) / (math.sqrt(v / (1 - 0.999**k)) + 1e-8)))
        assert s.omega == pytest.approx(w, abs=1e-15)


def test_fixed_omega():
    s = DigrapLayerState.for_size(1)
    omega_update(s, -1.0, DigrapConfig(fixed_omega=0.3), t=5)
    assert s.omega == 0.3 and s.updates == 0
    with pytest.raises(ConfigError):
        DigrapConfig(fixed_omega=1.2)


def _run(space, spec, batch, cfg, steps, lr=1e-2):
    opt = DigrapOptimizer(space, cfg)
    for _ in range(steps):
        _, g = loss_and_grad(space, spec, batch)
        opt.step(g, lr)
    return opt


def test_step_one_is_plain_adam(mlp_space, mlp_spec, small_batch):
    capture_snapshot(mlp_space)
    ref = mlp_space.copy()
    _, g = loss_and_grad(ref, mlp_spec, small_batch)
    adam_step(ref, AdamState.for_space(ref), g, 1e-2)
    opt = _run(mlp_space, mlp_spec, small_batch, DigrapConfig(mu=100.0), 1)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(ref, mlp_space))
    assert opt.mean_omega == [0.0]


def test_optimizer_trace_and_omega_range(snap_space, mlp_spec, small_batch):
    opt = _run(snap_space, mlp_spec, small_batch, DigrapConfig(mu=0.5), 40)
    assert len(opt.trace) == 40 * len(snap_space.groups)
    assert all(0.0 <= r.omega <= 1.0 for r in opt.trace)
    assert all(r.lambda_equiv == 0.0 for r in opt.trace if not r.conflicting)
    assert set(opt.omegas()) == set(snap_space.names)


def test_frozen_groups_have_no_state_change(snap_space, mlp_spec, small_batch):
    snap_space.set_trainable(["W1", "b1"])
    before = snap_space["W0"].values.copy()
    opt = _run(snap_space, mlp_spec, small_batch, DigrapConfig(), 5)
    assert np.array_equal(snap_space["W0"].values, before)
    assert {r.group for r in opt.trace} == {"W1", "b1"}


def test_digrap_step_is_transactional(snap_space, mlp_spec, small_batch):
    opt = _run(snap_space, mlp_spec, small_batch, DigrapConfig(), 3)
    vals = [g.values.copy() for g in snap_space]
    om = {k: (s.omega, s.updates) for k, s in opt.states.items()}
    _, g = loss_and_grad(snap_space, mlp_spec, small_batch)
    g["b1"] = g["b1"] * np.nan
    with pytest.raises(NumericError):
        opt.step(g, 1e-2)
    assert all(np.array_equal(a, b.values) for a, b in zip(vals, snap_space))
    assert {k: (s.omega, s.updates) for k, s in opt.states.items()} == om
    assert opt.adam.t == 3


def test_requires_snapshot(mlp_space, mlp_spec, small_batch):
    _, g = loss_and_grad(mlp_space, mlp_spec, small_batch)
    with pytest.raises(StateError):
        digrap_step(mlp_space, AdamState.for_space(mlp_space), init_states(mlp_space),
                    DigrapConfig(), g, 0.1)


def test_trace_csv(snap_space, mlp_spec, small_batch, tmp_path):
    opt = _run(snap_space, mlp_spec, small_batch, DigrapConfig(), 2)
    p = tmp_path / "t.csv"
    write_trace_csv(opt.trace, p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",") == TRACE_HEADER
    assert len(lines) == 1 + 2 * len(snap_space.groups)
    assert lines[1].startswith("1,W0,0.0,0.0,")
