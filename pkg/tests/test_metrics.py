import warnings

import numpy as np
import pytest

from digrap.exceptions import ConfigError, ShapeError
from digrap.metrics import (accuracy, dataset_shift_score, delta_stats, maha_fit, maha_score,
                            maha_scores, omega_windows, window_trend)


def test_accuracy():
    assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75


def test_delta_stats_simple():
    d = delta_stats(0.55, 0.44, 0.5, 0.4)
    assert d.id_delta_pct == pytest.approx(10.0) and d.ood_delta_pct == pytest.approx(10.0)
    with pytest.raises(ConfigError):
        delta_stats(0.5, 0.5, 0.0, 0.5)


def test_maha_matches_explicit_inverse():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((500, 5)) @ rng.standard_normal((5, 5))
    m = maha_fit(z, ridge=1e-3)
    cov = np.cov(z, rowvar=False) + 1e-3 * np.eye(5)
    q = rng.standard_normal((7, 5))
    d = q - z.mean(0)
    expect = np.sqrt(np.einsum("ij,jk,ik->i", d, np.linalg.inv(cov), d))
    assert np.allclose(maha_scores(m, q), expect, rtol=1e-10)
    assert maha_score(m, q[0]) == pytest.approx(expect[0], rel=1e-10)
    assert maha_score(m, z.mean(0)) == 0.0


def test_maha_default_ridge_and_degenerate():
    z = np.zeros((10, 3))
    z[:, 0] = np.arange(10)
    m = maha_fit(z)
    assert m.ridge == pytest.approx(1e-3 * np.var(z[:, 0], ddof=1) / 3)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        maha_fit(np.random.default_rng(0).standard_normal((3, 5)))
        assert w
    with pytest.raises(ShapeError):
        maha_scores(m, np.zeros((2, 4)))
    with pytest.raises(ConfigError):
        maha_fit(np.zeros((1, 3)))


def test_shift_score_increases_with_shift():
    rng = np.random.default_rng(1)
    m = maha_fit(rng.standard_normal((1000, 4)))
    near = dataset_shift_score(m, rng.standard_normal((300, 4)) + 0.5)
    far = dataset_shift_score(m, rng.standard_normal((300, 4)) + 3.0)
    assert near.mean < far.mean and far.per_sample.shape == (300,)


def test_windows():
    assert np.allclose(omega_windows([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    with pytest.raises(ConfigError):
        omega_windows([1, 2], 3)
    early, late = window_trend(np.arange(600.0), 50)
    assert early == pytest.approx(29.5) and late == pytest.approx(569.5)
    with pytest.raises(ConfigError):
        window_trend(np.arange(100.0), 50)
