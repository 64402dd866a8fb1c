"""Finite-element Laplacian on a metric graph and its eigendecomposition.

The operator is built from the quadratic form

    E(f, f) = sum_e int |f_e'|^2 + sum_v <Lam_v P_R f(v), P_R f(v)>

with P1 elements.  Vertex values are restricted to range(I - P_D) through an
orthonormal constraint basis, so Dirichlet parts are imposed exactly while
Neumann and Robin parts are natural.  The discrete H = -Laplacian is the
pencil (K, M); its eigenvectors are M-orthonormal, which makes every
spectral propagator exactly unitary in the discrete L^2 norm.

By default the mass matrix is lumped (trapezoidal weights).  Then the
discrete L^2 norm is the trapezoid norm used everywhere else, and both the
linear and the pointwise nonlinear steps of a splitting scheme preserve it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .coupling import VertexCoupling, standard_coupling
from .graph import Mesh, check_grid_function

__all__ = [
    "SpectralError",
    "DiscreteOperator",
    "SpectralDecomposition",
    "assemble",
    "eigendecompose",
    "project_continuous",
    "form_norm",
    "default_couplings",
]

DOF_BUDGET = 20_000


class SpectralError(ValueError):
    pass


def default_couplings(mesh: Mesh, kind: str = "kirchhoff", **params) -> dict[Hashable, VertexCoupling]:
    g = mesh.graph
    return {v: standard_coupling(kind, g.degree(v), **params) for v in g.vertices}


@dataclass(frozen=True)
class DiscreteOperator:
    """Stiffness K and mass M on the constrained space.

    ``E`` maps constrained coordinates to raw grid values and has orthonormal
    columns.  ``M_raw`` is the mass matrix on raw grid values; it defines the
    inner product used for all projections.
    """

    mesh: Mesh
    couplings: Mapping[Hashable, VertexCoupling]
    K: sp.csr_matrix = field(repr=False)
    M: sp.csr_matrix = field(repr=False)
    E: sp.csr_matrix = field(repr=False)
    M_raw: sp.csr_matrix = field(repr=False)
    mass: str = "lumped"

    @property
    def n_dof(self) -> int:
        return self.K.shape[0]

    @property
    def is_real(self) -> bool:
        return not (np.iscomplexobj(self.K.data) or np.iscomplexobj(self.E.data))

    def to_constrained(self, f: np.ndarray) -> np.ndarray:
        """L^2-orthogonal projection of raw values onto the constrained space."""
        f = check_grid_function(self.mesh, f)
        rhs = self.E.conj().T @ (self.M_raw @ f.T)
        if self.mass == "lumped" and _is_diagonal(self.M):
            return (rhs / self.M.diagonal()[:, None] if rhs.ndim == 2 else rhs / self.M.diagonal()).T
        solve = sp.linalg.factorized(self.M.tocsc())
        if rhs.ndim == 1:
            return solve(rhs)
        return np.column_stack([solve(rhs[:, j]) for j in range(rhs.shape[1])]).T

    def to_raw(self, c: np.ndarray) -> np.ndarray:
        return (self.E @ np.asarray(c).T).T

    def form_value(self, f: np.ndarray) -> float:
        """E(f, f) for a grid function in the constrained space."""
        c = self.to_constrained(f)
        return float(np.real(np.vdot(c, self.K @ c)))


def _is_diagonal(A: sp.spmatrix) -> bool:
    A = A.tocoo()
    return bool(np.all(A.row == A.col))


def assemble(mesh: Mesh, couplings: Mapping[Hashable, VertexCoupling] | None = None, mass: str = "lumped") -> DiscreteOperator:
    """P1 stiffness and mass matrices for -Laplacian with the given couplings."""
    g = mesh.graph
    if couplings is None:
        couplings = default_couplings(mesh)
    if mass not in ("lumped", "consistent"):
        raise SpectralError(f"unknown mass matrix {mass!r}")
    missing = set(g.vertices) - set(couplings)
    if missing:
        raise SpectralError(f"no coupling given for vertices {sorted(map(str, missing))}")
    for v in g.vertices:
        if couplings[v].degree != g.degree(v):
            raise SpectralError(f"coupling at {v!r} has size {couplings[v].degree}, vertex degree is {g.degree(v)}")

    K_raw, M_raw = _raw_matrices(mesh, mass)
    E, vertex_cols = _constraint_basis(mesh, couplings)
    if E.shape[1] > DOF_BUDGET:
        raise SpectralError(f"{E.shape[1]} degrees of freedom exceed the dense budget of {DOF_BUDGET}")

    K = (E.conj().T @ K_raw @ E).tolil()
    for v, (cols, Q) in vertex_cols.items():
        Lam = couplings[v].Lam
        if cols and np.any(Lam):
            block = Q.conj().T @ Lam @ Q
            K[np.ix_(cols, cols)] = K[np.ix_(cols, cols)].toarray() + block
    K = K.tocsr()
    M = (E.conj().T @ M_raw @ E).tocsr()
    K = (K + K.conj().T) / 2
    M = (M + M.conj().T) / 2
    if not np.iscomplexobj(E.data) and not any(np.iscomplexobj(c.Lam) for c in couplings.values()):
        K, M = K.real, M.real
    return DiscreteOperator(mesh, dict(couplings), K.tocsr(), M.tocsr(), E.tocsr(), M_raw.tocsr(), mass)


def _raw_matrices(mesh: Mesh, mass: str) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    Ks, Ms = [], []
    for x in mesh.nodes:
        h = np.diff(x)
        n = len(x)
        main = np.zeros(n)
        main[:-1] += 1 / h
        main[1:] += 1 / h
        Ks.append(sp.diags([-1 / h, main, -1 / h], [-1, 0, 1]))
        if mass == "lumped":
            w = np.zeros(n)
            w[:-1] += h / 2
            w[1:] += h / 2
            Ms.append(sp.diags(w))
        else:
            d = np.zeros(n)
            d[:-1] += h / 3
            d[1:] += h / 3
            Ms.append(sp.diags([h / 6, d, h / 6], [-1, 0, 1]))
    return sp.block_diag(Ks, format="csr"), sp.block_diag(Ms, format="csr")


def _constraint_basis(mesh: Mesh, couplings: Mapping[Hashable, VertexCoupling]):
    """Sparse E (raw x constrained) and, per vertex, its columns and basis Q_v."""
    g = mesh.graph
    boundary = set()
    rows, cols, vals = [], [], []
    vertex_cols: dict[Hashable, tuple[list[int], np.ndarray]] = {}
    col = 0
    for v in g.vertices:
        slots = mesh.vertex_slots(v)
        boundary.update(slots)
        Q = couplings[v].free_basis()
        if not couplings[v].is_real:
            Q = Q.astype(complex)
        vcols = list(range(col, col + Q.shape[1]))
        for j in range(Q.shape[1]):
            for i, s in enumerate(slots):
                if Q[i, j] != 0:
                    rows.append(s)
                    cols.append(col + j)
                    vals.append(Q[i, j])
        vertex_cols[v] = (vcols, Q)
        col += Q.shape[1]
    dropped = set(mesh.far_nodes()) if mesh.far_end == "dirichlet" else set()
    for idx in range(mesh.size):
        if idx in boundary or idx in dropped:
            continue
        rows.append(idx)
        cols.append(col)
        vals.append(1.0)
        col += 1
    vals = np.array(vals)
    E = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.size, col))
    return E, vertex_cols


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of the pencil (K, M).

    ``modes`` holds the eigenvectors as raw grid functions, one per column.
    ``point`` indexes the eigenvalues below ``-tol_neg``.  For graphs other
    than stars this sign split is only a heuristic, see ``split_is_exact``.
    """

    op: DiscreteOperator
    eigenvalues: np.ndarray
    modes: np.ndarray = field(repr=False)
    point: np.ndarray
    M_shift: float
    tol_neg: float = 1e-8

    @property
    def split_is_exact(self) -> bool:
        return self.op.mesh.graph.is_star()

    @property
    def phi(self) -> np.ndarray:
        """Eigenvectors in constrained coordinates."""
        return np.asarray(self.op.E.conj().T @ self.modes)

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        """<f, phi_k> for a grid function or a stack of them (last axis)."""
        f = check_grid_function(self.op.mesh, f)
        Mf = (self.op.M_raw @ f.T).T
        return Mf @ self.modes.conj()

    def synthesize(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a) @ self.modes.T

    def apply(self, multiplier: np.ndarray, f: np.ndarray) -> np.ndarray:
        """sum_k multiplier_k <f, phi_k> phi_k."""
        return self.synthesize(multiplier * self.coefficients(f))


def eigendecompose(op: DiscreteOperator, tol_neg: float = 1e-8) -> SpectralDecomposition:
    K = op.K.toarray()
    M = op.M.toarray()
    try:
        scipy.linalg.cholesky(M, lower=True)
    except np.linalg.LinAlgError:
        raise SpectralError("mass matrix is not positive definite") from None
    lam, phi = scipy.linalg.eigh(K, M)
    modes = np.asarray(op.E @ phi)
    point = np.flatnonzero(lam < -tol_neg)
    M_shift = 1.0 + max(0.0, -float(lam[0])) if lam.size else 1.0
    return SpectralDecomposition(op, lam, modes, point, M_shift, tol_neg)


def project_continuous(sd: SpectralDecomposition, f: np.ndarray) -> np.ndarray:
    """Remove the components along the point-spectrum eigenvectors."""
    f = check_grid_function(sd.op.mesh, f)
    if sd.point.size == 0:
        return np.array(f, dtype=complex)
    P = sd.modes[:, sd.point]
    a = (sd.op.M_raw @ f.T).T @ P.conj()
    return f - a @ P.T


def form_norm(sd: SpectralDecomposition, op: DiscreteOperator, f: np.ndarray) -> float:
    """sqrt(M_shift ||f||^2 + E(f, f)) on the constrained space."""
    c = op.to_constrained(f)
    mass = np.real(np.vdot(c, op.M @ c))
    energy = np.real(np.vdot(c, op.K @ c))
    radicand = sd.M_shift * mass + energy
    if radicand < -1e-12 * max(1.0, abs(mass)):
        raise SpectralError(f"negative form norm radicand {radicand}; M_shift is too small")
    return float(np.sqrt(max(radicand, 0.0)))
