"""Nonlinear Schrödinger dynamics with random dispersion.

The equation is ``dX = i Laplacian X dbeta + i F(X) dt`` with
``F(u) = g(|u|^2) u``, written in mild form as

    X(t) = S(t, 0) X_0 + i int_0^t S(t, s) F(X(s)) ds,
    S(t, s) = exp(i (beta(t) - beta(s)) Laplacian).

``beta`` is a sampled driver: a Brownian path (white-noise dispersion), the
rescaled integral of a stationary process (random dispersion), or any other
continuous path.  The splitting solver composes the exact linear flow over a
driver increment with the exact nonlinear flow ``u -> u exp(i tau g(|u|^2))``,
so every step preserves the discrete L^2 norm.  ``picard_solve`` iterates the
mild formula directly and serves as an independent oracle.

All solvers accept a stack of initial data / drivers (one row per trial) and
advance them together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import lp_norm
from .noise import NoisePath, brownian_path, scaled_dispersion_integral
from .propagation import PropagatorContext

__all__ = [
    "SolverError",
    "Truncation",
    "SolverConfig",
    "Trajectory",
    "is_admissible",
    "l2_theory_pair",
    "theta",
    "theta_R",
    "nonlinear_phase_step",
    "splitting_step",
    "solve_wnd",
    "solve_random_dispersion",
    "solve_with_driver",
    "picard_solve",
    "ito_euler_step",
]


class SolverError(RuntimeError):
    pass


def is_admissible(r: float, p: float) -> bool:
    """``(inf, 2)``, or ``2 <= r, p < inf`` with ``2/r + 1/p > 1/2``."""
    if math.isinf(r):
        return p == 2
    return 2 <= r < math.inf and 2 <= p < math.inf and 2 / r + 1 / p > 0.5


def l2_theory_pair(sigma: float, r: float, p: float) -> bool:
    """``p = 2 sigma + 2`` and ``2 sigma + 2 <= r < 4 (sigma + 1) / sigma``."""
    return math.isclose(p, 2 * sigma + 2) and 2 * sigma + 2 <= r < 4 * (sigma + 1) / sigma


def theta(x):
    """Smooth cutoff: 1 on [0, 1], 0 on [2, inf), C^2 quintic in between."""
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10 - 15 * s + 6 * s**2)


@dataclass(frozen=True)
class Truncation:
    """``none``; ``pointwise`` (g = rho^sigma theta(rho/R)); ``norm``
    (g = theta(|X|_{L^r_t L^p_x}/R) rho^sigma with the running norm)."""

    kind: str = "none"
    R: float = math.inf
    r: float = 4.0
    p: float = 4.0

    def __post_init__(self):
        if self.kind not in ("none", "pointwise", "norm"):
            raise ValueError(f"unknown truncation {self.kind!r}")
        if self.kind != "none" and not self.R > 0:
            raise ValueError("truncation level R must be positive")
        if self.kind == "norm" and not is_admissible(self.r, self.p):
            raise ValueError(f"({self.r}, {self.p}) is not an admissible pair")


@dataclass(frozen=True)
class SolverConfig:
    sigma: float = 1.0
    dt: float = 1e-3
    T: float = 1.0
    truncation: Truncation = field(default_factory=Truncation)
    pair: tuple[float, float] = (4.0, 4.0)
    scheme: str = "splitting"
    strang: bool = False
    mu: float = 0.0
    seed: int | None = 0
    save_every: int = 1
    blowup_factor: float = 1e6
    nonlinear: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not is_admissible(*self.pair):
            raise ValueError(f"{self.pair} is not an admissible pair")
        if self.scheme not in ("splitting", "picard", "ito_euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")
        t = self.truncation
        if t.kind == "norm" and not l2_theory_pair(self.sigma, t.r, t.p):
            raise ValueError(
                f"norm truncation needs p = 2 sigma + 2 and 2 sigma + 2 <= r < 4(sigma+1)/sigma, got ({t.r}, {t.p})"
            )

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.T / self.dt - 1e-9)))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass
class Trajectory:
    """Saved states and per-save diagnostics.

    Arrays carry a leading trial axis when the solver ran a stack of trials.
    ``running_rp`` is the prefix norm ``|X|_{L^r_{[0,t]} L^p_x}`` for the
    configured pair, computed on the full step grid.
    """

    times: np.ndarray
    states: np.ndarray | None
    l2: np.ndarray
    linf: np.ndarray
    form: np.ndarray | None
    running_rp: np.ndarray
    driver: np.ndarray
    stopped: np.ndarray
    stop_time: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[..., -1, :]

    def l2_drift(self) -> np.ndarray:
        return np.max(np.abs(self.l2 - self.l2[..., :1]), axis=-1) / np.maximum(self.l2[..., 0], 1e-300)


def nonlinear_phase_step(f: np.ndarray, tau, sigma: float, trunc: Truncation | None = None, factor=1.0) -> np.ndarray:
    """Exact flow of ``u' = i g(|u|^2) u`` over time ``tau``.

    ``factor`` multiplies g (one value per trial for the norm truncation).
    """
    f = np.asarray(f)
    rho = np.abs(f) ** 2
    g = rho**sigma
    if trunc is not None and trunc.kind == "pointwise":
        g = g * theta(rho / trunc.R)
    phase = np.asarray(tau * np.asarray(factor, dtype=float))
    if phase.ndim:
        phase = phase[..., None]
    return f * np.exp(1j * phase * g)


def theta_R(running_norm, R: float):
    """``theta(running_norm / R)``."""
    return theta(np.asarray(running_norm) / R)


def _linear(ctx: PropagatorContext, f: np.ndarray, dbeta: np.ndarray) -> np.ndarray:
    sd = ctx.sd
    a = sd.coefficients(f)
    return sd.synthesize(a * np.exp(-1j * dbeta[:, None] * sd.eigenvalues[None, :]))


def splitting_step(ctx: PropagatorContext, f: np.ndarray, dbeta, dt: float, cfg: SolverConfig, factor=1.0) -> np.ndarray:
    """One Lie step ``N(dt) o S(dbeta)``; Strang ``N(dt/2) S(dbeta) N(dt/2)`` with ``cfg.strang``."""
    f = np.atleast_2d(f)
    dbeta = np.broadcast_to(np.asarray(dbeta, dtype=float), f.shape[:1])
    trunc = cfg.truncation
    if not cfg.nonlinear:
        return _linear(ctx, f, dbeta)
    if cfg.strang:
        f = nonlinear_phase_step(f, dt / 2, cfg.sigma, trunc, factor)
        f = _linear(ctx, f, dbeta)
        return nonlinear_phase_step(f, dt / 2, cfg.sigma, trunc, factor)
    return nonlinear_phase_step(_linear(ctx, f, dbeta), dt, cfg.sigma, trunc, factor)


class _Recorder:
    """Running norms and saved snapshots for a stack of trials."""

    def __init__(self, ctx, cfg: SolverConfig, X0: np.ndarray, times: np.ndarray, keep_states: bool, with_form: bool):
        self.ctx, self.cfg, self.times = ctx, cfg, times
        self.mesh = ctx.mesh
        self.r, self.p = cfg.pair
        self.keep_states, self.with_form = keep_states, with_form
        self.saved_idx = list(range(0, len(times), cfg.save_every))
        if self.saved_idx[-1] != len(times) - 1:
            self.saved_idx.append(len(times) - 1)
        self.l2, self.linf, self.form, self.states, self.rp = [], [], [], [], []
        n = X0.shape[0]
        self.integral = np.zeros(n)
        self.prev = None
        self.trunc_integral = np.zeros(n)
        self.trunc_prev = None

    def running(self, integral):
        if math.isinf(self.r):
            return integral
        return integral ** (1 / self.r)

    def step(self, k: int, X: np.ndarray):
        cfg = self.cfg
        pn = lp_norm(self.mesh, X, self.p)
        if math.isinf(self.r):
            self.integral = np.maximum(self.integral, pn)
        elif self.prev is not None:
            self.integral = self.integral + 0.5 * (self.times[k] - self.times[k - 1]) * (self.prev**self.r + pn**self.r)
        self.prev = pn
        t = cfg.truncation
        if t.kind == "norm":
            tn = lp_norm(self.mesh, X, t.p)
            if self.trunc_prev is not None:
                self.trunc_integral = self.trunc_integral + 0.5 * (self.times[k] - self.times[k - 1]) * (
                    self.trunc_prev**t.r + tn**t.r
                )
            self.trunc_prev = tn
        if k in self.saved_idx_set:
            self.l2.append(lp_norm(self.mesh, X, 2))
            self.linf.append(lp_norm(self.mesh, X, math.inf))
            self.rp.append(self.running(self.integral))
            if self.with_form:
                sd = self.ctx.sd
                a = sd.coefficients(X)
                self.form.append(np.sqrt(np.maximum((np.abs(a) ** 2) @ (sd.M_shift + sd.eigenvalues), 0.0)))
            if self.keep_states:
                self.states.append(X.copy())

    def truncation_factor(self):
        t = self.cfg.truncation
        if t.kind != "norm":
            return 1.0
        return theta_R(self.trunc_integral ** (1 / t.r), t.R)

    @property
    def saved_idx_set(self):
        s = getattr(self, "_set", None)
        if s is None:
            s = self._set = set(self.saved_idx)
        return s


def solve_with_driver(
    ctx: PropagatorContext,
    X0: np.ndarray,
    cfg: SolverConfig,
    driver: np.ndarray,
    keep_states: bool = True,
    with_form: bool = True,
) -> Trajectory:
    """Splitting solve for a driver sampled at ``cfg.times``.

    ``driver`` has shape ``(N+1,)`` or ``(n_trials, N+1)``; ``X0`` is one grid
    function or a stack with one row per trial.
    """
    times = cfg.times
    single = np.ndim(X0) == 1 and np.ndim(driver) == 1
    driver = np.atleast_2d(np.asarray(driver, dtype=float))
    X = np.atleast_2d(np.asarray(X0, dtype=complex))
    n = max(driver.shape[0], X.shape[0])
    if driver.shape[-1] != len(times):
        raise SolverError(f"driver has {driver.shape[-1]} samples, the time grid has {len(times)}")
    if driver.shape[0] not in (1, n) or X.shape[0] not in (1, n):
        raise SolverError("driver and initial data stacks disagree in size")
    driver = np.broadcast_to(driver, (n, len(times)))
    X = np.array(np.broadcast_to(X, (n, X.shape[-1])))

    rec = _Recorder(ctx, cfg, X, times, keep_states, with_form)
    rec.step(0, X)
    ceiling = cfg.blowup_factor * np.maximum(np.abs(X).max(axis=-1), 1e-300)
    stopped = np.zeros(n, dtype=bool)
    stop_time = np.full(n, np.inf)
    dbeta = np.diff(driver, axis=-1)
    for k in range(1, len(times)):
        dt = times[k] - times[k - 1]
        factor = rec.truncation_factor()
        Xn = splitting_step(ctx, X, dbeta[:, k - 1], dt, cfg, factor)
        if not np.all(np.isfinite(Xn)):
            bad = ~np.all(np.isfinite(Xn), axis=-1)
            raise SolverError(f"non-finite values at t={times[k]:.6g} in trials {np.flatnonzero(bad)[:5].tolist()}")
        # stopped trials are frozen at their last state
        Xn[stopped] = X[stopped]
        blow = (~stopped) & (np.abs(Xn).max(axis=-1) > ceiling)
        if blow.any():
            stopped |= blow
            stop_time[blow] = times[k]
        X = Xn
        rec.step(k, X)

    idx = rec.saved_idx
    traj = Trajectory(
        times=times[idx],
        states=np.stack(rec.states, axis=1) if keep_states else None,
        l2=np.stack(rec.l2, axis=-1),
        linf=np.stack(rec.linf, axis=-1),
        form=np.stack(rec.form, axis=-1) if with_form else None,
        running_rp=np.stack(rec.rp, axis=-1),
        driver=driver[:, idx],
        stopped=stopped,
        stop_time=stop_time,
        meta={"pair": cfg.pair, "sigma": cfg.sigma, "dt": cfg.dt, "strang": cfg.strang},
    )
    return _squeeze(traj) if single else traj


def _squeeze(traj: Trajectory) -> Trajectory:
    def sq(a):
        return None if a is None else a[0]

    return replace(
        traj,
        states=sq(traj.states),
        l2=traj.l2[0],
        linf=traj.linf[0],
        form=sq(traj.form),
        running_rp=traj.running_rp[0],
        driver=traj.driver[0],
        stopped=traj.stopped[0],
        stop_time=traj.stop_time[0],
    )


def solve_wnd(
    ctx: PropagatorContext,
    X0: np.ndarray,
    cfg: SolverConfig,
    path: NoisePath | None = None,
    **kwargs,
) -> Trajectory:
    """White-noise dispersion: the driver is a Brownian path (drift ``cfg.mu``).

    Without ``path`` a Brownian path on the solver grid is drawn from
    ``cfg.seed``.  A supplied path is sampled at the solver times; when its
    grid refines the solver grid this is exact.
    """
    if path is None:
        path = brownian_path(cfg.T, cfg.dt, cfg.mu, cfg.seed)
    return solve_with_driver(ctx, X0, cfg, path.value_at(cfg.times), **kwargs)


def solve_random_dispersion(
    ctx: PropagatorContext,
    X0: np.ndarray,
    cfg: SolverConfig,
    eps: float,
    m: NoisePath,
    **kwargs,
) -> Trajectory:
    """Random dispersion ``(1/eps) m(t/eps^2)``: driver ``beta_eps`` from ``m``."""
    driver = scaled_dispersion_integral(m, eps, cfg.times)
    traj = solve_with_driver(ctx, X0, cfg, driver, **kwargs)
    traj.meta["eps"] = eps
    return traj


def picard_solve(
    ctx: PropagatorContext,
    X0: np.ndarray,
    driver: np.ndarray,
    cfg: SolverConfig,
    tol: float = 1e-10,
    max_iter: int = 60,
    window: float | None = None,
) -> Trajectory:
    """Fixed-point iteration of the mild formula on the grid ``cfg.times``.

    The Duhamel integral is accumulated in eigen-coefficients with the
    trapezoidal rule,

        D_i = exp(-i lam (n_i - n_{i-1})) (D_{i-1} + dt/2 b_{i-1}) + dt/2 b_i,

    where ``b`` are the coefficients of F(u) and ``n`` the driver.  The
    horizon is cut into windows; a window whose iterates stop contracting is
    halved and restarted.  Iterations stop when the sup-in-time L^2 change
    falls below ``tol``.
    """
    trunc = cfg.truncation
    if trunc.kind == "none" and cfg.nonlinear:
        raise SolverError("picard_solve needs a truncated nonlinearity")
    sd = ctx.sd
    mesh = ctx.mesh
    times = cfg.times
    n_drv = np.asarray(driver, dtype=float)
    if n_drv.shape != times.shape:
        raise SolverError(f"driver has shape {n_drv.shape}, time grid {times.shape}")
    lam = sd.eigenvalues
    N = len(times) - 1
    steps_per_window = N if window is None else max(1, int(round(window / cfg.dt)))

    def F_coeff(U: np.ndarray, factor) -> np.ndarray:
        rho = np.abs(U) ** 2
        g = rho**cfg.sigma
        if trunc.kind == "pointwise":
            g = g * theta(rho / trunc.R)
        F = (np.asarray(factor)[:, None] if np.ndim(factor) else factor) * g * U
        return sd.coefficients(F)

    c0 = sd.coefficients(np.asarray(X0, dtype=complex))
    coeffs = np.empty((N + 1, lam.size), dtype=complex)
    coeffs[0] = c0
    trunc_integral = 0.0
    start = 0
    iterations = []
    while start < N:
        length = min(steps_per_window, N - start)
        while True:
            result = _picard_window(
                sd, mesh, cfg, lam, times, n_drv, start, length, coeffs[start], F_coeff, trunc_integral, tol, max_iter
            )
            if result is not None:
                break
            if length == 1:
                raise SolverError(f"Picard iteration does not contract on a single step at t={times[start]:.6g}")
            length = max(1, length // 2)
        window_coeffs, trunc_integral, its = result
        coeffs[start + 1 : start + length + 1] = window_coeffs[1:]
        iterations.append(its)
        start += length

    states = sd.synthesize(coeffs)
    l2 = lp_norm(mesh, states, 2)
    linf = lp_norm(mesh, states, math.inf)
    r, p = cfg.pair
    pn = lp_norm(mesh, states, p)
    if math.isinf(r):
        rp = np.maximum.accumulate(pn)
    else:
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (pn[1:] ** r + pn[:-1] ** r))])
        rp = cum ** (1 / r)
    form = np.sqrt(np.maximum((np.abs(coeffs) ** 2) @ (sd.M_shift + lam), 0.0))
    return Trajectory(
        times=times,
        states=states,
        l2=l2,
        linf=linf,
        form=form,
        running_rp=rp,
        driver=n_drv,
        stopped=np.bool_(False),
        stop_time=np.float64(np.inf),
        meta={"iterations": iterations, "scheme": "picard"},
    )


def _picard_window(sd, mesh, cfg, lam, times, n_drv, start, length, c_start, F_coeff, trunc_integral0, tol, max_iter):
    """Iterate on steps ``start .. start+length``; None if not contracting."""
    trunc = cfg.truncation
    idx = np.arange(start, start + length + 1)
    dn = n_drv[idx] - n_drv[start]
    free = c_start[None, :] * np.exp(-1j * dn[:, None] * lam[None, :])
    step_phase = np.exp(-1j * np.diff(n_drv[idx])[:, None] * lam[None, :])
    dts = np.diff(times[idx])
    C = free.copy()
    prev_change = math.inf
    growth = 0
    for it in range(1, max_iter + 1):
        U = sd.synthesize(C)
        if trunc.kind == "norm":
            pn = lp_norm(mesh, U, trunc.p) ** trunc.r
            cum = trunc_integral0 + np.concatenate([[0.0], np.cumsum(0.5 * dts * (pn[1:] + pn[:-1]))])
            factor = theta_R(cum ** (1 / trunc.r), trunc.R)
        else:
            factor = np.ones(len(idx))
            cum = None
        b = F_coeff(U, factor) if cfg.nonlinear else np.zeros_like(C)
        D = np.zeros_like(C)
        for i in range(1, len(idx)):
            D[i] = step_phase[i - 1] * (D[i - 1] + 0.5 * dts[i - 1] * b[i - 1]) + 0.5 * dts[i - 1] * b[i]
        C_new = free + 1j * D
        change = float(np.max(lp_norm(mesh, sd.synthesize(C_new - C), 2)))
        C = C_new
        if not np.all(np.isfinite(C)):
            return None
        if change <= tol:
            new_integral = trunc_integral0
            if trunc.kind == "norm":
                pn = lp_norm(mesh, sd.synthesize(C), trunc.p) ** trunc.r
                new_integral = trunc_integral0 + float(np.sum(0.5 * dts * (pn[1:] + pn[:-1])))
            return C, new_integral, it
        if change > prev_change:
            growth += 1
            if growth >= 3:
                return None
        prev_change = change
    return None


def ito_euler_step(ctx_or_lambdas, c: np.ndarray, dt: float, dbeta) -> np.ndarray:
    """Euler-Maruyama step of the Itô form ``dX = -(1/2) Lap^2 X dt + i Lap X dbeta``.

    Acts on eigen-coefficients: ``c_k <- c_k (1 - lam_k^2 dt / 2 - i lam_k dbeta)``.
    ``ctx_or_lambdas`` is a PropagatorContext or an array of eigenvalues.
    """
    lam = ctx_or_lambdas.eigenvalues if isinstance(ctx_or_lambdas, PropagatorContext) else np.asarray(ctx_or_lambdas)
    dbeta = np.asarray(dbeta, dtype=float)
    if dbeta.ndim:
        dbeta = dbeta[..., None]
    return c * (1 - 0.5 * lam**2 * dt - 1j * lam * dbeta)
