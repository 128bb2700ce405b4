import numpy as np
import pytest

from digrap.baselines import (MethodSpec, head_groups, lpft_phase, mag_project, probe_mask,
                              unfreeze, wise_interpolate)
from digrap.exceptions import ConfigError, ShapeError, StateError
from digrap.paramspace import init_params


def test_labels():
    assert MethodSpec().label == "VanillaFT"
    assert MethodSpec("digrap", mu=0.5).label == "DiGraP(mu=0.5)"
    assert MethodSpec("digrap", fixed_omega=0.1).label == "DiGraP(omega=0.1)"
    assert MethodSpec("l2sp", lam=0.01).label == "L2SP(lam=0.01)"
    assert MethodSpec("lpft", lp_epochs=3).label == "LPFT(lp=3)"
    assert MethodSpec("magproj", gamma=2).label == "MagProj(gamma=2)"


@pytest.mark.parametrize("kw", [dict(kind="sam"), dict(kind="wiseft", betas=(1.5,)),
                                dict(kind="magproj", gamma=0), dict(lam=-1), dict(mu=-1),
                                dict(fixed_omega=2), dict(lp_epochs=-1), dict(epochs=0)])
def test_method_validation(kw):
    with pytest.raises(ConfigError):
        MethodSpec(**kw)


def test_lp_epochs_default_and_budget():
    assert MethodSpec("lpft").lp_epochs_for(30) == 6
    with pytest.raises(ConfigError):
        MethodSpec("lpft", lp_epochs=40).lp_epochs_for(30)
    assert [lpft_phase(e, 2) for e in range(4)] == ["probe", "probe", "full", "full"]


def test_wise_endpoints_are_exact(snap_space):
    ft = snap_space.copy()
    w0 = wise_interpolate(snap_space, ft, 0.0)
    w1 = wise_interpolate(snap_space, ft, 1.0)
    for i, g in enumerate(w0.groups):
        assert np.array_equal(g.values, snap_space.snapshot[i])
        assert np.array_equal(w1.groups[i].values, ft.groups[i].values)
    mid = wise_interpolate(snap_space, ft, 0.25)
    expect = 0.75 * snap_space.snapshot[0] + 0.25 * ft.groups[0].values
    assert np.allclose(mid.groups[0].values, expect, rtol=0, atol=1e-15)


def test_wise_validation(snap_space):
    with pytest.raises(ConfigError):
        wise_interpolate(snap_space, snap_space, 1.1)
    with pytest.raises(ShapeError):
        wise_interpolate(init_params([2, 2], 0), snap_space, 0.5)


def test_probe_mask(mlp_space, mlp_spec):
    assert head_groups(mlp_spec) == ["W1", "b1"]
    probe_mask(mlp_space, mlp_spec)
    assert mlp_space.trainable_names() == ["W1", "b1"]
    unfreeze(mlp_space)
    assert mlp_space.trainable_names() == mlp_space.names


def test_mag_project(snap_space):
    snap_space["W0"].values[:] = snap_space.snapshot[0] + 10.0
    inside = snap_space["b0"].values.copy()
    mag_project(snap_space, 0.5)
    d = snap_space["W0"].values - snap_space.snapshot[0]
    assert np.linalg.norm(d) == pytest.approx(0.5)
    assert np.allclose(d, d[0])
    assert np.array_equal(snap_space["b0"].values, inside)
    with pytest.raises(StateError):
        mag_project(init_params([2, 2], 0), 1.0)
