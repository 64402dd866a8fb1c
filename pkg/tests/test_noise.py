from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgwnd.noise import (
    DriverExhausted,
    NoisePath,
    brownian_path,
    constant_path,
    ou_diffusion_variance,
    ou_path,
    scaled_dispersion_integral,
    telegraph_path,
    trial_seed,
)


def test_trial_seed_is_order_free():
    a = np.random.default_rng(trial_seed(7, 3)).random(4)
    b = np.random.default_rng(trial_seed(7, 3)).random(4)
    c = np.random.default_rng(trial_seed(7, 4)).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_brownian_moments():
    p = brownian_path(1.0, 0.01, mu=0.5, seed=0, n_paths=20000)
    end = p.values[:, -1]
    assert p.values.shape == (20000, 101)
    assert np.all(p.values[:, 0] == 0)
    assert end.mean() == pytest.approx(0.5, abs=0.03)
    assert end.var() == pytest.approx(1.0, rel=0.05)


def test_grid_rounds_to_horizon():
    p = brownian_path(1.0, 0.3, seed=1)
    assert p.n_steps == 4 and p.dt == pytest.approx(0.25) and p.T == pytest.approx(1.0)


def test_ou_stationary_statistics():
    gamma, s = 2.0, 1.5
    p = ou_path(gamma, s, 3.0, 0.05, seed=2, n_paths=20000)
    v = p.values
    var = s**2 / (2 * gamma)
    assert v[:, 0].var() == pytest.approx(var, rel=0.05)
    assert v[:, -1].var() == pytest.approx(var, rel=0.05)
    cov = np.mean(v[:, 0] * v[:, 20])
    assert cov == pytest.approx(var * math.exp(-gamma * 1.0), abs=0.02)


def test_ou_coupled_driver_tracks_brownian():
    # with driver W, eps * int m(u) du ~ (s/gamma) eps W(t/eps^2) up to O(eps)
    rng = np.random.default_rng(3)
    tau, du = 400.0, 0.01
    n = int(tau / du)
    dW = rng.normal(0, math.sqrt(du), (200, n))
    m = ou_path(1.0, 1.0, tau, du, seed=rng, n_paths=200, driver_increments=dW)
    eps = 0.05
    beta = scaled_dispersion_integral(m, eps, 1.0)
    z = eps * dW.sum(axis=1)
    assert np.sqrt(np.mean((beta - z) ** 2)) < 3 * eps
    with pytest.raises(ValueError):
        ou_path(1.0, 1.0, tau, du, seed=0, n_paths=200, driver_increments=dW[:, :-1])


def test_telegraph_values_and_covariance():
    p = telegraph_path(1.0, 2.0, 2.0, 0.05, seed=4, n_paths=20000)
    assert set(np.unique(p.values)) == {-2.0, 2.0}
    cov = np.mean(p.values[:, 0] * p.values[:, 10])
    assert cov == pytest.approx(4.0 * math.exp(-2 * 0.5), abs=0.1)


def test_scaled_integral_of_constant():
    m = constant_path(1.0, 100.0, 0.1)
    for eps in (1.0, 0.3):
        t = np.array([0.0, 0.5, 1.0])
        np.testing.assert_allclose(scaled_dispersion_integral(m, eps, t), t / eps, rtol=1e-12)


def test_scaled_integral_partial_cell():
    # m(u) = u integrates exactly under the linear interpolant
    m = NoisePath(0.5, np.arange(11) * 0.5, "ramp")
    np.testing.assert_allclose(scaled_dispersion_integral(m, 1.0, [0.3, 1.7, 4.9]), np.array([0.3, 1.7, 4.9]) ** 2 / 2)


def test_driver_exhausted():
    m = constant_path(1.0, 1.0, 0.1)
    with pytest.raises(DriverExhausted):
        scaled_dispersion_integral(m, 0.5, 1.0)
    with pytest.raises(DriverExhausted):
        m.value_at(1.5)
    with pytest.raises(ValueError):
        scaled_dispersion_integral(m, 0.0, 0.1)


def test_ou_diffusion_variance_limits():
    assert ou_diffusion_variance(1.0, 1.0, 1e-3) == pytest.approx(1.0, rel=1e-5)
    assert ou_diffusion_variance(2.0, 3.0, 1e-3, t=2.0) == pytest.approx(2 * (3 / 2) ** 2, rel=1e-5)
    assert ou_diffusion_variance(1.0, 1.0, 1.0) == pytest.approx(1 - (1 - math.exp(-1)))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ou_path(0.0, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        telegraph_path(1.0, -1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        brownian_path(-1.0, 0.1)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0.0, 5.0), seed=st.integers(0, 1000))
def test_value_at_interpolates(t, seed):
    p = brownian_path(5.0, 0.25, seed=seed)
    v = p.value_at(t)
    k = min(int(t / 0.25), p.n_steps - 1)
    lo, hi = sorted((p.values[k], p.values[k + 1]))
    assert lo - 1e-12 <= v <= hi + 1e-12
