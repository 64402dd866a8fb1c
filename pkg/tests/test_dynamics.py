from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_datum
from qgwnd.dynamics import (
    SolverConfig,
    SolverError,
    Truncation,
    is_admissible,
    ito_euler_step,
    l2_theory_pair,
    nonlinear_phase_step,
    picard_solve,
    solve_random_dispersion,
    solve_with_driver,
    solve_wnd,
    theta,
)
from qgwnd.graph import lp_norm
from qgwnd.noise import brownian_path, constant_path
from qgwnd.propagation import schrodinger_group


def test_theta_shape():
    x = np.linspace(0, 3, 301)
    th = theta(x)
    assert np.all(th[x <= 1] == 1) and np.all(th[x >= 2] == 0)
    assert np.all(np.diff(th) <= 1e-15)
    d = np.gradient(th, x)
    assert abs(d[100]) < 1e-3 and abs(d[200]) < 1e-3


def test_admissible_pairs():
    assert is_admissible(math.inf, 2)
    assert is_admissible(4, 4)
    assert not is_admissible(math.inf, 4)
    assert not is_admissible(1.5, 4)
    assert l2_theory_pair(1.0, 4.0, 4.0)
    assert not l2_theory_pair(1.0, 8.0, 4.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0)
    with pytest.raises(ValueError):
        SolverConfig(pair=(1.0, 4.0))
    with pytest.raises(ValueError):
        SolverConfig(truncation=Truncation("norm", 10.0, 6.0, 6.0))
    with pytest.raises(ValueError):
        Truncation("soft", 1.0)
    cfg = SolverConfig(dt=0.3, T=1.0)
    assert cfg.n_steps == 4 and cfg.times[-1] == 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), tau=st.floats(-5, 5), R=st.floats(0.1, 100))
def test_phase_step_preserves_modulus(seed, tau, R):
    rng = np.random.default_rng(seed)
    f = 3 * (rng.standard_normal(50) + 1j * rng.standard_normal(50))
    for trunc in (None, Truncation("pointwise", R)):
        g = nonlinear_phase_step(f, tau, 1.0, trunc)
        assert np.abs(np.abs(g) - np.abs(f)).max() <= 1e-15 * np.abs(f).max() * 10


def test_phase_step_small_amplitude_is_phase_only():
    f = np.full(4, 1e-3 + 0j)
    np.testing.assert_allclose(nonlinear_phase_step(f, 0.1, 1.0), f * np.exp(1j * 0.1 * 1e-6), rtol=1e-14)


def test_zero_datum_stays_zero(kirchhoff_ctx):
    cfg = SolverConfig(dt=0.01, T=0.1)
    tr = solve_wnd(kirchhoff_ctx, kirchhoff_ctx.mesh.zeros(), cfg)
    assert np.all(tr.states == 0)


def test_l2_conserved_over_1000_steps(kirchhoff_ctx):
    cfg = SolverConfig(dt=1e-3, T=1.0, seed=3, save_every=50)
    tr = solve_wnd(kirchhoff_ctx, smooth_datum(kirchhoff_ctx, 2.0), cfg, with_form=False)
    assert tr.l2_drift() <= 1e-8


def test_nonlinearity_off_gives_linear_flow(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx)
    cfg = SolverConfig(dt=0.01, T=0.2, nonlinear=False)
    path = brownian_path(0.2, 0.01, seed=5)
    tr = solve_wnd(ctx, X0, cfg, path)
    np.testing.assert_allclose(tr.final, schrodinger_group(ctx, path.values[-1], X0), atol=1e-10)


def test_zero_dispersion_keeps_modulus(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx, 2.0)
    cfg = SolverConfig(dt=0.01, T=0.3)
    tr = solve_random_dispersion(ctx, X0, cfg, 0.5, constant_path(0.0, 2.0, 0.01))
    np.testing.assert_allclose(np.abs(tr.states), np.abs(X0)[None, :] * np.ones((tr.times.size, 1)), atol=1e-10)


def test_unit_dispersion_is_deterministic_nlse(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx)
    cfg = SolverConfig(dt=0.01, T=0.3)
    a = solve_random_dispersion(ctx, X0, cfg, 1.0, constant_path(1.0, 0.3, 0.01))
    b = solve_with_driver(ctx, X0, cfg, cfg.times)
    np.testing.assert_allclose(a.final, b.final, atol=1e-10)


def test_generous_truncation_matches_untruncated(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx)
    path = brownian_path(0.5, 0.01, seed=8)
    plain = solve_wnd(ctx, X0, SolverConfig(dt=0.01, T=0.5), path)
    for trunc in (Truncation("pointwise", 1e3), Truncation("norm", 1e3, 4.0, 4.0)):
        cut = solve_wnd(ctx, X0, SolverConfig(dt=0.01, T=0.5, truncation=trunc), path)
        np.testing.assert_allclose(cut.final, plain.final, atol=1e-12)


def test_norm_truncation_switches_off_nonlinearity(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx, 3.0)
    path = brownian_path(0.3, 0.01, seed=2)
    tiny = solve_wnd(ctx, X0, SolverConfig(dt=0.01, T=0.3, truncation=Truncation("norm", 1e-6, 4.0, 4.0)), path)
    lin = solve_wnd(ctx, X0, SolverConfig(dt=0.01, T=0.3, nonlinear=False), path)
    # the first step still sees a zero prefix norm
    assert np.abs(tiny.final - lin.final).max() < 0.2 * np.abs(lin.final).max()
    assert tiny.l2_drift() < 1e-10


def test_self_convergence_in_dt(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx, 1.5)
    T = 0.25
    fine = brownian_path(T, T / 512, seed=11)
    finals = []
    for n in (32, 64, 128, 256):
        cfg = SolverConfig(dt=T / n, T=T, strang=True)
        finals.append(solve_with_driver(ctx, X0, cfg, fine.value_at(cfg.times), with_form=False).final)
    diffs = [lp_norm(ctx.mesh, a - b, 2) for a, b in zip(finals, finals[1:])]
    assert diffs[0] > diffs[1] > diffs[2]


def test_batched_trials_match_single_runs(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx)
    cfg = SolverConfig(dt=0.02, T=0.2)
    drivers = brownian_path(0.2, 0.02, seed=1, n_paths=3).values
    batch = solve_with_driver(ctx, X0, cfg, drivers)
    for k in range(3):
        one = solve_with_driver(ctx, X0, cfg, drivers[k])
        np.testing.assert_allclose(batch.final[k], one.final, atol=1e-13)
        np.testing.assert_allclose(batch.form[k], one.form, atol=1e-12)


def test_blowup_flag(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx)
    cfg = SolverConfig(dt=0.01, T=0.1, blowup_factor=1.0000001)
    drv = np.stack([np.zeros(11), 5 * np.linspace(0, 0.1, 11)])
    tr = solve_with_driver(ctx, X0, cfg, drv)
    assert tr.stopped.dtype == bool
    with pytest.raises(SolverError):
        solve_with_driver(ctx, X0, cfg, np.zeros(5))


def test_picard_linear_one_iteration(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx)
    cfg = SolverConfig(dt=0.01, T=0.2, nonlinear=False)
    drv = brownian_path(0.2, 0.01, seed=3).values
    tr = picard_solve(ctx, X0, drv, cfg)
    assert tr.meta["iterations"] == [1]
    np.testing.assert_allclose(tr.final, schrodinger_group(ctx, drv[-1], X0), atol=1e-10)


def test_picard_zero_and_requires_truncation(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    cfg = SolverConfig(dt=0.01, T=0.1, truncation=Truncation("pointwise", 10.0))
    drv = np.zeros(11)
    assert np.all(picard_solve(ctx, ctx.mesh.zeros(), drv, cfg).states == 0)
    with pytest.raises(SolverError):
        picard_solve(ctx, ctx.mesh.zeros(), drv, SolverConfig(dt=0.01, T=0.1))


def test_picard_agrees_with_strang(kirchhoff_ctx):
    ctx = kirchhoff_ctx
    X0 = smooth_datum(ctx, 1.5)
    T = 0.25
    fine = brownian_path(T, T / 256, seed=4)
    errs = []
    for n in (16, 32, 64):
        cfg = SolverConfig(dt=T / n, T=T, strang=True, truncation=Truncation("pointwise", 100.0))
        drv = fine.value_at(cfg.times)
        a = picard_solve(ctx, X0, drv, cfg)
        b = solve_with_driver(ctx, X0, cfg, drv, with_form=False)
        errs.append(np.max(lp_norm(ctx.mesh, a.states - b.states, 2)))
    assert errs[0] > errs[1] > errs[2]
    assert math.log2(errs[1] / errs[2]) > 1.5


def test_ito_euler_single_mode_recursion():
    lam = np.array([0.7])
    c = np.array([1.0 + 0j])
    dt, db = 0.01, np.array([0.05, -0.02, 0.1])
    for d in db:
        expected = c * (1 - 0.5 * lam**2 * dt - 1j * lam * d)
        c = ito_euler_step(lam, c, dt, d)
        np.testing.assert_allclose(c, expected, rtol=1e-15)


def test_ito_euler_identity_limit(kirchhoff_ctx):
    c = np.ones(kirchhoff_ctx.eigenvalues.size, dtype=complex)
    out = ito_euler_step(kirchhoff_ctx, c, 1e-9, 0.0)
    np.testing.assert_allclose(out, c, atol=1e-9 * kirchhoff_ctx.eigenvalues.max() ** 2)
