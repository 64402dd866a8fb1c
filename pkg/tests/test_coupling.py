from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgwnd.coupling import (
    CouplingError,
    SpectralPointError,
    VertexCoupling,
    check_self_adjoint,
    count_negative_eigs_predicted,
    parse_coupling,
    random_coupling,
    scattering_matrix,
    standard_coupling,
)


def test_kirchhoff_projectors():
    c = standard_coupling("kirchhoff", 3)
    ones = np.ones(3) / np.sqrt(3)
    np.testing.assert_allclose(c.P_N, np.outer(ones, ones), atol=1e-12)
    np.testing.assert_allclose(c.P_D, np.eye(3) - np.outer(ones, ones), atol=1e-12)
    np.testing.assert_allclose(c.P_R, 0, atol=1e-12)
    assert c.negative_count() == 0


def test_dirichlet_and_neumann():
    d = standard_coupling("dirichlet", 2)
    np.testing.assert_allclose(d.P_D, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(d.scattering(1.7), -np.eye(2), atol=1e-12)
    n = standard_coupling("neumann", 2)
    np.testing.assert_allclose(n.P_N, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(n.scattering(0.3), np.eye(2), atol=1e-12)


@pytest.mark.parametrize("alpha", [-2.0, -0.5, 0.7, 3.0])
def test_delta_robin_strength(alpha):
    c = standard_coupling("delta", 3, alpha=alpha)
    lam = np.linalg.eigvalsh(c.Lam)
    nonzero = lam[np.abs(lam) > 1e-12]
    np.testing.assert_allclose(nonzero, [alpha / 3], atol=1e-12)
    assert c.negative_count() == int(alpha < 0)


def test_delta_prime_robin_strength():
    c = standard_coupling("delta_prime", 3, beta=2.0)
    lam = np.linalg.eigvalsh(c.Lam)
    np.testing.assert_allclose(lam[np.abs(lam) > 1e-12], [3 / 2.0], atol=1e-12)


def test_kirchhoff_scattering_known_value():
    n = 3
    G = standard_coupling("kirchhoff", n).scattering(2.0)
    np.testing.assert_allclose(G, 2 / n * np.ones((n, n)) - np.eye(n), atol=1e-12)


def test_delta_scattering_known_value():
    # vertex scattering for delta(alpha): (2/n)/(1 - alpha/(i k n)) J - I
    n, alpha, k = 3, 1.3, 0.8
    G = standard_coupling("delta", n, alpha=alpha).scattering(k)
    factor = (2 / n) * 1j * k / (1j * k - alpha / n)
    np.testing.assert_allclose(G, factor * np.ones((n, n)) - np.eye(n), atol=1e-12)


def test_scattering_pole_raises():
    # delta(-1) on star(3) has a bound state at k = i/3
    with pytest.raises(SpectralPointError):
        standard_coupling("delta", 3, alpha=-1.0).scattering(1j / 3)
    with pytest.raises(np.linalg.LinAlgError):
        scattering_matrix(1j / 3, *standard_coupling("delta", 3, alpha=-1.0).canonical_pair())


def test_not_self_adjoint_rejected():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    B = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert not check_self_adjoint(A, B).passed
    with pytest.raises(CouplingError):
        VertexCoupling(A, B)
    with pytest.raises(CouplingError):
        VertexCoupling(np.zeros((2, 2)), np.zeros((2, 2)))


def test_canonical_pair_equivalent():
    c = random_coupling(4, np.random.default_rng(3))
    A2, B2 = c.canonical_pair()
    for k in (0.4, 1.0, 2.5):
        np.testing.assert_allclose(c.scattering(k), scattering_matrix(k, A2, B2), atol=1e-9)


def test_parse_coupling():
    c = parse_coupling({"kind": "delta", "params": {"alpha": 2}}, 3)
    assert c.kind == "delta" and c.params["alpha"] == 2.0
    m = parse_coupling({"A": [[1, 0], [0, 1]], "B": [[0, 0], [0, [0, 0]]]}, 2)
    np.testing.assert_allclose(m.P_D, np.eye(2), atol=1e-12)
    with pytest.raises(CouplingError):
        parse_coupling({"A": [[1]], "B": [[0]]}, 2)
    with pytest.raises(ValueError):
        standard_coupling("magnetic", 2)


def test_real_coupling_has_real_projectors():
    c = random_coupling(3, np.random.default_rng(5), real=True)
    assert c.is_real
    for P in (c.P_D, c.P_N, c.P_R, c.Lam):
        assert P.dtype.kind == "f"


def test_residual_zero_on_admissible_data():
    c = standard_coupling("delta", 3, alpha=2.0)
    f = np.ones(3)
    fp = np.array([2 / 3, 2 / 3, 2 / 3])  # sum f' = alpha f(0)
    assert c.residual(f, fp) < 1e-12


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), seed=st.integers(0, 2**31 - 1))
def test_random_coupling_projectors(n, seed):
    c = random_coupling(n, np.random.default_rng(seed))
    I = np.eye(n)
    for P in (c.P_D, c.P_N, c.P_R):
        np.testing.assert_allclose(P @ P, P, atol=1e-9)
        np.testing.assert_allclose(P, P.conj().T, atol=1e-9)
    np.testing.assert_allclose(c.P_D + c.P_N + c.P_R, I, atol=1e-9)
    np.testing.assert_allclose(c.P_D @ c.P_N, 0, atol=1e-9)
    # A B^dagger is congruent to -Lam on range(P_R), so n_+ counts negative Robin eigenvalues
    assert count_negative_eigs_predicted(c.A, c.B) == int(np.sum(np.linalg.eigvalsh(c.Lam) < -1e-9))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), seed=st.integers(0, 2**31 - 1), k=st.floats(0.05, 20.0))
def test_scattering_unitary_and_forms_agree(n, seed, k):
    c = random_coupling(n, np.random.default_rng(seed))
    G = c.scattering(k)
    np.testing.assert_allclose(G @ G.conj().T, np.eye(n), atol=1e-8)
    np.testing.assert_allclose(c.scattering(k, "projector"), G, atol=1e-8)
