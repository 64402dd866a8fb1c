from __future__ import annotations

import math

import numpy as np
import pytest

from qgwnd.coupling import standard_coupling
from qgwnd.graph import build_graph, discretize, line_with_defects, star
from qgwnd.spectral import (
    SpectralError,
    assemble,
    default_couplings,
    eigendecompose,
    form_norm,
    project_continuous,
)


def _interval_graph(length: float = 1.0):
    return build_graph({"vertices": ["a", "b"], "edges": [{"from": "a", "to": "b", "length": length}]})


def test_dirichlet_interval_eigenvalues_second_order():
    errs = []
    for h in (0.02, 0.01):
        mesh = discretize(_interval_graph(), h)
        sd = eigendecompose(assemble(mesh, default_couplings(mesh, "dirichlet")))
        exact = (np.pi * np.arange(1, 4)) ** 2
        errs.append(np.abs(sd.eigenvalues[:3] - exact).max())
    assert errs[0] / exact[-1] < 5e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_neumann_interval_has_zero_mode():
    mesh = discretize(_interval_graph(2.0), 0.01)
    sd = eigendecompose(assemble(mesh, default_couplings(mesh, "neumann")))
    assert abs(sd.eigenvalues[0]) < 1e-10
    np.testing.assert_allclose(sd.eigenvalues[1], (np.pi / 2) ** 2, rtol=1e-3)
    assert sd.point.size == 0


def test_consistent_mass_reproduces_fem_matrices():
    mesh = discretize(_interval_graph(), 1 / 4)
    op = assemble(mesh, default_couplings(mesh, "dirichlet"), mass="consistent")
    h = 0.25
    K = op.K.toarray()
    M = op.M.toarray()
    np.testing.assert_allclose(K, (np.diag([2.0] * 3) - np.eye(3, k=1) - np.eye(3, k=-1)) / h)
    np.testing.assert_allclose(M, h * (np.diag([4.0] * 3) + np.eye(3, k=1) + np.eye(3, k=-1)) / 6)


def test_delta_star_bound_state():
    mesh = discretize(star(3), 0.05, 30.0)
    sd = eigendecompose(assemble(mesh, default_couplings(mesh, "delta", alpha=-1.0)))
    assert sd.point.size == 1
    assert sd.eigenvalues[0] == pytest.approx(-1 / 9, abs=5e-3)
    assert sd.M_shift == pytest.approx(1 - sd.eigenvalues[0])
    assert sd.split_is_exact


def test_kirchhoff_star_no_point_spectrum(kirchhoff_ctx):
    sd = kirchhoff_ctx.sd
    assert sd.point.size == 0
    assert sd.eigenvalues.min() > 0


def test_eigenvectors_are_orthonormal(kirchhoff_ctx):
    sd = kirchhoff_ctx.sd
    G = sd.modes.conj().T @ (sd.op.M_raw @ sd.modes)
    np.testing.assert_allclose(G, np.eye(G.shape[0]), atol=1e-10)


def test_modes_satisfy_kirchhoff_conditions(kirchhoff_ctx):
    sd = kirchhoff_ctx.sd
    mesh = kirchhoff_ctx.mesh
    slots = mesh.vertex_slots("o")
    vals = sd.modes[slots, :20]
    np.testing.assert_allclose(vals - vals[0], 0, atol=1e-12)


def test_projection_roundtrip(kirchhoff_ctx, rng):
    sd = kirchhoff_ctx.sd
    f = rng.standard_normal(kirchhoff_ctx.mesh.size) + 0j
    g = sd.synthesize(sd.coefficients(f))
    np.testing.assert_allclose(sd.synthesize(sd.coefficients(g)), g, atol=1e-10)
    assert np.linalg.norm(sd.op.to_raw(sd.op.to_constrained(g)) - g) < 1e-10


def test_project_continuous_removes_bound_state(delta_ctx):
    sd = delta_ctx.sd
    phi0 = sd.modes[:, 0]
    assert np.abs(project_continuous(sd, phi0)).max() < 1e-10
    f = delta_ctx.mesh.sample(lambda e, x: np.exp(-x))
    assert abs(sd.coefficients(project_continuous(sd, f))[0]) < 1e-12


def test_form_value_robin_term():
    # E(f, f) = int |f'|^2 + alpha |f(0)|^2; for f = e^{-x} on 3 edges: 3/2 + alpha
    mesh = discretize(star(3), 0.005, 30.0)
    op = assemble(mesh, default_couplings(mesh, "delta", alpha=2.0))
    f = mesh.sample(lambda e, x: np.exp(-x))
    assert op.form_value(f) == pytest.approx(3.5, abs=1e-3)


def test_form_norm_of_eigenmode(delta_ctx):
    sd = delta_ctx.sd
    k = 5
    phi = sd.modes[:, k]
    assert form_norm(sd, sd.op, phi) == pytest.approx(math.sqrt(sd.M_shift + sd.eigenvalues[k]), rel=1e-8)


def test_line_with_defects_delta_bound_state():
    # two delta(-1) defects at distance 2 on the line: even bound state k solves k(1 + tanh(k)) = 1
    g = line_with_defects([-1.0, 1.0])
    mesh = discretize(g, 0.05, 20.0)
    sd = eigendecompose(assemble(mesh, default_couplings(mesh, "delta", alpha=-1.0)))
    from scipy.optimize import brentq

    k = brentq(lambda k: k * (1 + math.tanh(k)) - 1, 0.1, 1.0)
    assert sd.eigenvalues[0] == pytest.approx(-(k**2), abs=5e-3)


def test_assemble_errors():
    mesh = discretize(star(3), 0.1, 5.0)
    with pytest.raises(SpectralError):
        assemble(mesh, {"o": standard_coupling("kirchhoff", 2)})
    with pytest.raises(SpectralError):
        assemble(mesh, {})
    with pytest.raises(SpectralError):
        assemble(mesh, mass="diagonal")
