"""Vertex coupling conditions ``A f(v) + B f'(v) = 0``.

Derivatives at a vertex always point into the edge.  Every self-adjoint pair
(A, B) splits C^n into Dirichlet, Neumann and Robin parts,

    P_D f = 0,   P_N f' = 0,   P_R f' = Lam P_R f,

and the Robin strength ``Lam`` is stored with exactly this sign, which is the
one entering the quadratic form ``sum |f'|^2 + <Lam P_R f, P_R f>``.  With this
sign the scattering matrix reads

    G(k) = -P_D + P_N - (Lam - ik)^{-1} (Lam + ik) P_R,

which equals ``-(A + ikB)^{-1} (A - ikB)``.  The pair is not unique (any
invertible left factor gives the same conditions); ``canonical_pair`` returns
the representative ``A = P_D - Lam``, ``B = P_N + P_R``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

__all__ = [
    "CouplingError",
    "SpectralPointError",
    "SelfAdjointReport",
    "VertexCoupling",
    "check_self_adjoint",
    "projector_decomposition",
    "standard_coupling",
    "scattering_matrix",
    "count_negative_eigs_predicted",
    "parse_coupling",
    "random_coupling",
]

RANK_RTOL = 1e-10


class CouplingError(ValueError):
    """Coupling matrices that do not define a self-adjoint Laplacian."""


class SpectralPointError(np.linalg.LinAlgError):
    """``A + ikB`` is singular: ``k^2`` is in the spectrum."""


class SelfAdjointReport(NamedTuple):
    passed: bool
    rank: int
    hermiticity_residual: float


def _as_pair(A, B) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    B = np.atleast_2d(np.asarray(B, dtype=complex))
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError(f"A and B must be square and of equal size, got {A.shape} and {B.shape}")
    return A, B


def _numerical_rank(M: np.ndarray) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def check_self_adjoint(A, B) -> SelfAdjointReport:
    """Rank and hermiticity test for the pair (A, B)."""
    A, B = _as_pair(A, B)
    n = A.shape[0]
    rank = _numerical_rank(np.hstack([A, B]))
    AB = A @ B.conj().T
    residual = float(np.linalg.norm(AB - AB.conj().T, 2))
    passed = rank == n and residual <= 1e-10 * (1.0 + np.linalg.norm(AB, 2))
    return SelfAdjointReport(passed, rank, residual)


def _range_projector(M: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column space of M.

    M is a block of an orthonormal basis, so singular values are at most one
    and an absolute cut-off is the right notion of rank.
    """
    if M.size == 0:
        return np.zeros((M.shape[0], M.shape[0]), dtype=complex)
    U, s, _ = np.linalg.svd(M)
    r = int(np.sum(s > RANK_RTOL))
    Q = U[:, :r]
    return Q @ Q.conj().T


def _orth_basis(P: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the range of a projector."""
    w, V = np.linalg.eigh((P + P.conj().T) / 2)
    return V[:, w > 0.5]


def projector_decomposition(A, B) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(P_D, P_N, P_R, Lam)`` for a self-adjoint pair.

    The admissible boundary data form the n-dimensional kernel of ``[A | B]``.
    P_D projects onto the complement of the values ``f`` that occur in it,
    P_N onto the complement of the derivatives ``f'`` that occur, and Lam is
    read off from ``P_R f' = Lam P_R f`` on that kernel.  Lam is returned as
    an n x n matrix that vanishes off range(P_R).
    """
    A, B = _as_pair(A, B)
    report = check_self_adjoint(A, B)
    if not report.passed:
        raise CouplingError(
            f"pair is not self-adjoint (rank {report.rank}, hermiticity residual {report.hermiticity_residual:.2e})"
        )
    n = A.shape[0]
    _, _, Vh = np.linalg.svd(np.hstack([A, B]))
    kernel = Vh[n:].conj().T
    F, Fp = kernel[:n], kernel[n:]
    eye = np.eye(n)
    P_D = eye - _range_projector(F)
    P_N = eye - _range_projector(Fp)
    P_R = eye - P_D - P_N
    Q = _orth_basis(P_R)
    if Q.shape[1]:
        lam_r = (Q.conj().T @ Fp) @ np.linalg.pinv(Q.conj().T @ F)
        Lam = Q @ lam_r @ Q.conj().T
    else:
        Lam = np.zeros((n, n), dtype=complex)
    return P_D, P_N, P_R, Lam


@dataclass(frozen=True)
class VertexCoupling:
    """A validated self-adjoint coupling with its projector decomposition."""

    A: np.ndarray
    B: np.ndarray
    kind: str = "custom"
    params: Mapping = field(default_factory=dict)
    P_D: np.ndarray = field(init=False, repr=False)
    P_N: np.ndarray = field(init=False, repr=False)
    P_R: np.ndarray = field(init=False, repr=False)
    Lam: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A, B = _as_pair(self.A, self.B)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        P_D, P_N, P_R, Lam = projector_decomposition(A, B)
        if self.is_real:
            P_D, P_N, P_R, Lam = P_D.real, P_N.real, P_R.real, Lam.real
        object.__setattr__(self, "P_D", P_D)
        object.__setattr__(self, "P_N", P_N)
        object.__setattr__(self, "P_R", P_R)
        object.__setattr__(self, "Lam", Lam)
        Q = self.robin_basis()
        if Q.shape[1]:
            lam_r = Q.conj().T @ Lam @ Q
            if np.linalg.norm(lam_r - lam_r.conj().T) > 1e-8 * (1 + np.linalg.norm(lam_r)):
                raise CouplingError("Robin operator is not hermitian")
            if np.linalg.svd(lam_r, compute_uv=False).min() <= 1e-10:
                raise CouplingError("Robin operator is not invertible on range(P_R)")

    @property
    def degree(self) -> int:
        return self.A.shape[0]

    @property
    def is_real(self) -> bool:
        return bool(np.all(np.isreal(self.A)) and np.all(np.isreal(self.B)))

    def robin_basis(self) -> np.ndarray:
        return _orth_basis(self.P_R)

    def free_basis(self) -> np.ndarray:
        """Orthonormal basis of range(I - P_D), the admissible vertex values."""
        return _orth_basis(np.eye(self.degree) - self.P_D)

    def canonical_pair(self) -> tuple[np.ndarray, np.ndarray]:
        return self.P_D - self.Lam, self.P_N + self.P_R

    def scattering(self, k: complex, method: str = "inverse") -> np.ndarray:
        if method == "inverse":
            return scattering_matrix(k, self.A, self.B)
        if method != "projector":
            raise ValueError(f"unknown method {method!r}")
        G = -self.P_D + self.P_N
        Q = self.robin_basis()
        if Q.shape[1]:
            lam_r = Q.conj().T @ self.Lam @ Q
            eye = np.eye(Q.shape[1])
            G = G - Q @ np.linalg.solve(lam_r - 1j * k * eye, lam_r + 1j * k * eye) @ Q.conj().T
        return G

    def negative_count(self) -> int:
        return count_negative_eigs_predicted(self.A, self.B)

    def residual(self, f: np.ndarray, fp: np.ndarray) -> float:
        """``|A f + B f'|`` for boundary values and inward derivatives."""
        return float(np.linalg.norm(self.A @ f + self.B @ fp))


def standard_coupling(kind: str, degree: int, **params) -> VertexCoupling:
    """Textbook (A, B) for the common vertex conditions.

    kinds: ``kirchhoff``, ``dirichlet``, ``neumann``, ``delta`` (``alpha``),
    ``delta_prime`` (``beta``), ``custom`` (``A``, ``B``).
    """
    n = int(degree)
    if n < 1:
        raise ValueError("degree must be >= 1")
    A = np.zeros((n, n), dtype=complex)
    B = np.zeros((n, n), dtype=complex)
    if kind in ("kirchhoff", "delta"):
        alpha = float(params.get("alpha", 0.0)) if kind == "delta" else 0.0
        for i in range(n - 1):
            A[i, i], A[i, i + 1] = 1, -1
        A[n - 1, 0] = -alpha
        B[n - 1, :] = 1
        stored = {"alpha": alpha} if kind == "delta" else {}
    elif kind == "dirichlet":
        A[:] = np.eye(n)
        stored = {}
    elif kind == "neumann":
        B[:] = np.eye(n)
        stored = {}
    elif kind == "delta_prime":
        beta = float(params["beta"])
        for i in range(n - 1):
            B[i, i], B[i, i + 1] = 1, -1
        A[n - 1, :] = 1
        B[n - 1, 0] = -beta
        stored = {"beta": beta}
    elif kind == "custom":
        A, B = _as_pair(params["A"], params["B"])
        stored = {}
    else:
        raise ValueError(f"unknown coupling kind {kind!r}")
    return VertexCoupling(A, B, kind, stored)


def scattering_matrix(k: complex, A, B) -> np.ndarray:
    """``G(k) = -(A + ikB)^{-1}(A - ikB)``."""
    A, B = _as_pair(A, B)
    M = A + 1j * k * B
    if np.linalg.cond(M) > 1e12:
        raise SpectralPointError(f"A + ikB is singular at k={k}")
    return -np.linalg.solve(M, A - 1j * k * B)


def count_negative_eigs_predicted(A, B) -> int:
    """Number of positive eigenvalues of the hermitian matrix ``A B^dagger``."""
    A, B = _as_pair(A, B)
    AB = A @ B.conj().T
    # relative to |A||B|, so a product that only vanishes up to rounding counts nothing
    scale = np.linalg.norm(A, 2) * np.linalg.norm(B, 2)
    if scale == 0:
        return 0
    w = np.linalg.eigvalsh((AB + AB.conj().T) / 2)
    return int(np.sum(w > 1e-10 * scale))


def _complex_matrix(rows) -> np.ndarray:
    """Matrix from nested lists whose entries are numbers or ``[re, im]`` pairs."""
    out = []
    for row in rows:
        out_row = []
        for x in row:
            if isinstance(x, (list, tuple)):
                re, im = x
                out_row.append(complex(re, im))
            else:
                out_row.append(complex(x))
        out.append(out_row)
    return np.array(out, dtype=complex)


def parse_coupling(spec: Mapping, degree: int) -> VertexCoupling:
    """Coupling from ``{kind, params}`` or ``{A, B}`` (complex entries as [re, im])."""
    if "A" in spec or "B" in spec:
        A, B = _complex_matrix(spec["A"]), _complex_matrix(spec["B"])
        if A.shape != (degree, degree):
            raise CouplingError(f"coupling matrices are {A.shape}, vertex degree is {degree}")
        return VertexCoupling(A, B)
    return standard_coupling(spec.get("kind", "kirchhoff"), degree, **dict(spec.get("params", {})))


def random_coupling(n: int, rng: np.random.Generator, scramble: bool = True, real: bool = False) -> VertexCoupling:
    """Random self-adjoint coupling of degree n.

    The three projector ranks are drawn at random, the Robin strength is a
    random invertible hermitian matrix, and with ``scramble`` the canonical
    pair is multiplied from the left by a random invertible matrix.
    """
    if real:
        Z = rng.standard_normal((n, n))
    else:
        Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    U, _ = np.linalg.qr(Z)
    cuts = np.sort(rng.integers(0, n + 1, size=2))
    D, N, R = U[:, : cuts[0]], U[:, cuts[0] : cuts[1]], U[:, cuts[1] :]
    r = R.shape[1]
    if r:
        H = rng.standard_normal((r, r)) + (0 if real else 1j * rng.standard_normal((r, r)))
        H = (H + H.conj().T) / 2
        w, V = np.linalg.eigh(H)
        w = np.where(np.abs(w) < 0.2, np.sign(w + 1e-300) * 0.2 + w, w)
        lam_r = (V * w) @ V.conj().T
        Lam = R @ lam_r @ R.conj().T
    else:
        Lam = np.zeros((n, n))
    A = D @ D.conj().T - Lam
    B = N @ N.conj().T + R @ R.conj().T
    if scramble:
        C = rng.standard_normal((n, n)) + (0 if real else 1j * rng.standard_normal((n, n)))
        C += 3 * np.eye(n)
        A, B = C @ A, C @ B
    return VertexCoupling(A, B)
