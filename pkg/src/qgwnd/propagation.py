"""Linear Schrödinger flows: the graph group, its random-time version, the
free group on the real line, and the derivative formula on star graphs.

Convention: the generator is ``i Laplacian = -iH`` with ``H`` the discrete
operator from :mod:`qgwnd.spectral`, so

    U(t) f = sum_k exp(-i t lambda_k) <f, phi_k> phi_k,

and on the line ``exp(it d^2/dx^2)`` has Fourier multiplier ``exp(-i t k^2)``
and kernel ``(4 pi i t)^(-1/2) exp(i (x - y)^2 / (4 t))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import erfcx

from .coupling import VertexCoupling
from .graph import check_grid_function, edge_derivative, lp_norm
from .spectral import SpectralDecomposition, project_continuous

__all__ = [
    "PropagatorContext",
    "StarData",
    "DecayResult",
    "schrodinger_group",
    "evolve_many",
    "stochastic_propagator",
    "free_line_propagator",
    "free_line_exponential",
    "star_derivative_rhs",
    "decay_ratio",
    "spectral_kmax",
    "pre_reflection_time",
]


class StarData(NamedTuple):
    coupling: VertexCoupling
    n: int
    alpha: float | None


@dataclass(frozen=True)
class PropagatorContext:
    sd: SpectralDecomposition
    star: StarData | None = field(default=None)

    @classmethod
    def build(cls, sd: SpectralDecomposition) -> PropagatorContext:
        g = sd.op.mesh.graph
        star = None
        if g.is_star():
            c = sd.op.couplings[g.vertices[0]]
            alpha = float(c.params["alpha"]) if c.kind == "delta" else None
            star = StarData(c, len(g.edges), alpha)
        return cls(sd, star)

    @property
    def mesh(self):
        return self.sd.op.mesh

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.sd.eigenvalues


def schrodinger_group(ctx: PropagatorContext, t: float, f: np.ndarray) -> np.ndarray:
    """``U(t) f``; a stack of grid functions is propagated row by row."""
    if t == 0:
        return ctx.sd.synthesize(ctx.sd.coefficients(f))
    return ctx.sd.apply(np.exp(-1j * t * ctx.eigenvalues), f)


def evolve_many(ctx: PropagatorContext, times, f: np.ndarray) -> np.ndarray:
    """``U(t_j) f`` for every entry of ``times``; one row per time."""
    a = ctx.sd.coefficients(f)
    phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), ctx.eigenvalues))
    return ctx.sd.synthesize(phases * a)


def stochastic_propagator(ctx: PropagatorContext, dbeta, f: np.ndarray) -> np.ndarray:
    """``exp(i dbeta Laplacian) f``: the group at the random time ``dbeta``.

    ``dbeta`` may be an array matching the leading axis of a stack ``f``.
    """
    dbeta = np.asarray(dbeta, dtype=float)
    if dbeta.ndim == 0:
        return schrodinger_group(ctx, float(dbeta), f)
    return ctx.sd.apply(np.exp(-1j * dbeta[:, None] * ctx.eigenvalues[None, :]), f)


def _trapezoid_weights(y: np.ndarray) -> np.ndarray:
    dy = np.diff(y)
    w = np.zeros_like(y)
    w[:-1] += dy / 2
    w[1:] += dy / 2
    return w


def free_line_propagator(
    t: float,
    y: np.ndarray,
    g: np.ndarray,
    x: np.ndarray | None = None,
    damping: float = 1e-4,
    chunk: int = 2048,
) -> np.ndarray:
    """``exp(it d^2/dx^2) g`` on the real line by direct quadrature.

    ``g`` is sampled at the increasing points ``y`` and taken to vanish
    outside them.  The kernel is evaluated at the complex time
    ``it + damping*t``, i.e. the result is ``exp(damping*t d^2/dx^2)``
    applied after the free flow, which suppresses the far oscillatory tails.
    """
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=complex)
    x = y if x is None else np.asarray(x, dtype=float)
    if t == 0:
        if x is y:
            return g.copy()
        return np.interp(x, y, g.real) + 1j * np.interp(x, y, g.imag)
    D = 1j * t + damping * abs(t)
    wg = _trapezoid_weights(y) * g
    pref = 1.0 / np.sqrt(4 * np.pi * D)
    out = np.empty(x.shape, dtype=complex)
    for start in range(0, len(x), chunk):
        xs = x[start : start + chunk]
        out[start : start + chunk] = pref * (np.exp(-((xs[:, None] - y[None, :]) ** 2) / (4 * D)) @ wg)
    return out


def free_line_exponential(t: float, x: np.ndarray, b: float, damping: float = 1e-4) -> np.ndarray:
    """Closed form of ``exp(it d^2/dx^2)`` applied to ``exp(b y) 1_{y<=0}`` (b > 0).

    Equals ``(1/2) exp(-x^2/(4D)) erfcx((x + 2bD) / (2 sqrt D))`` with
    ``D = it + damping*t``, evaluated in a form that neither over- nor
    underflows.
    """
    if b <= 0:
        raise ValueError("decay rate must be positive")
    x = np.asarray(x, dtype=float)
    D = 1j * t + damping * abs(t)
    z = (x + 2 * b * D) / (2 * np.sqrt(D))
    return 0.5 * np.exp(-(x**2) / (4 * D)) * erfcx(z)


def _point_derivatives(ctx: PropagatorContext) -> np.ndarray:
    sd = ctx.sd
    if sd.point.size == 0:
        return np.zeros((0, ctx.mesh.size))
    return edge_derivative(ctx.mesh, sd.modes[:, sd.point].T)


def star_derivative_rhs(ctx: PropagatorContext, t: float, v: np.ndarray, damping: float = 1e-4) -> np.ndarray:
    """Right-hand side of the derivative formula on a star graph.

    For each edge j and x >= 0,

        d/dx [U(t) v]_j(x) = -[U(t) P_c v']_j(x) + 2 [exp(it D_R) v~'_j](x)
                             + sum_l <v, phi_l> exp(-it lambda_l) phi_l'(x) + J(x),

    where ``v~'_j`` is ``v_j'`` extended by zero to x < 0 and ``D_R`` is the
    line Laplacian.  ``J`` vanishes unless the coupling is a delta coupling of
    strength alpha.  With ``a = alpha/n``, ``J = 2a v(0) exp(it D_R) psi`` for
    ``psi(y) = exp(a y) 1_{y<=0}`` if alpha > 0, and
    ``J = -2a v(0) exp(it D_R) [exp(a y) 1_{y>=0}]`` if alpha < 0.
    Derivatives of ``v`` and of the bound states are taken by second-order
    finite differences on the mesh.
    """
    if ctx.star is None:
        raise ValueError("the derivative formula is available on star graphs only")
    c = ctx.star.coupling
    if np.linalg.norm(c.P_R) > 1e-10 and ctx.star.alpha is None:
        raise ValueError("unsupported coupling: Robin part present and not a delta coupling")
    mesh = ctx.mesh
    v = check_grid_function(mesh, v)
    vp = edge_derivative(mesh, v)
    sd = ctx.sd

    out = -schrodinger_group(ctx, t, project_continuous(sd, vp))
    if sd.point.size:
        a_pt = sd.coefficients(v)[sd.point]
        out = out + (a_pt * np.exp(-1j * t * sd.eigenvalues[sd.point])) @ _point_derivatives(ctx)

    alpha = ctx.star.alpha
    v0 = v[mesh.vertex_slots(mesh.graph.vertices[0])].mean()
    for e, x in enumerate(mesh.nodes):
        sl = mesh.edge_slice(e)
        out[sl] += 2 * free_line_propagator(t, x, vp[sl], damping=damping)
        if alpha:
            a = alpha / ctx.star.n
            if alpha > 0:
                out[sl] += 2 * a * v0 * free_line_exponential(t, x, a, damping)
            else:
                out[sl] += -2 * a * v0 * free_line_exponential(t, -x, -a, damping)
    return out


def spectral_kmax(ctx: PropagatorContext, f: np.ndarray, mass_fraction: float = 0.95) -> float:
    """Wavenumber below which ``mass_fraction`` of the L^2 mass of f lies."""
    a2 = np.abs(ctx.sd.coefficients(f)) ** 2
    total = a2.sum()
    if total == 0:
        return 0.0
    cum = np.cumsum(a2) / total
    idx = min(int(np.searchsorted(cum, mass_fraction)), len(cum) - 1)
    return math.sqrt(max(float(ctx.eigenvalues[idx]), 0.0))


def pre_reflection_time(L_trunc: float, k_max: float) -> float:
    """Largest t with ``4 t k_max < L_trunc``."""
    return math.inf if k_max == 0 else L_trunc / (4 * k_max)


class DecayResult(NamedTuple):
    ratio: float
    in_window: bool


def decay_ratio(ctx: PropagatorContext, f: np.ndarray, t: float, project: bool = True) -> DecayResult:
    """``||U(t) P_c f||_inf sqrt(t) / ||f||_1`` with a pre-reflection flag.

    With ``project=False`` the point spectrum is kept, which is the relevant
    quantity when there are no bound states.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    mesh = ctx.mesh
    norm1 = float(lp_norm(mesh, f, 1))
    if norm1 == 0:
        return DecayResult(0.0, True)
    g = project_continuous(ctx.sd, f) if project else f
    u = schrodinger_group(ctx, t, g)
    ratio = float(lp_norm(mesh, u, math.inf)) * math.sqrt(t) / norm1
    window = pre_reflection_time(mesh.L_trunc, spectral_kmax(ctx, f)) if mesh.graph.external_edges else math.inf
    return DecayResult(ratio, t < window)
