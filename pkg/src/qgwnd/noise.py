"""Random drivers: Brownian motion, stationary processes and their
diffusively rescaled integrals.

Paths live on uniform grids ``t_k = k dt``.  A path may carry a leading batch
axis, one row per Monte-Carlo trial.  Randomness always comes from
``numpy.random.Generator``; integer seeds are turned into generators with
``make_rng`` and per-trial seeds are derived with ``trial_seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

__all__ = [
    "NoisePath",
    "DriverExhausted",
    "make_rng",
    "trial_seed",
    "brownian_path",
    "ou_path",
    "telegraph_path",
    "constant_path",
    "scaled_dispersion_integral",
    "scaled_driver",
    "ou_diffusion_variance",
]


class DriverExhausted(ValueError):
    """The sampled path is too short for the requested horizon."""


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def trial_seed(master: int, index: int) -> np.random.SeedSequence:
    """Seed of trial ``index``: ``SeedSequence(master, spawn_key=(index,))``.

    The derivation only depends on the pair, so trials can be run in any
    order or on any worker.
    """
    return np.random.SeedSequence(master, spawn_key=(int(index),))


def _grid(T: float, dt: float) -> tuple[int, float]:
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return n, T / n


@dataclass(frozen=True)
class NoisePath:
    """Sampled path on the grid ``k * dt``, ``k = 0..N``."""

    dt: float
    values: np.ndarray = field(repr=False)
    kind: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def n_steps(self) -> int:
        return self.values.shape[-1] - 1

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-1)

    def value_at(self, t) -> np.ndarray:
        """Piecewise-linear interpolation; exact on grid points."""
        t = np.asarray(t, dtype=float)
        if np.any(t > self.T * (1 + 1e-12) + 1e-12) or np.any(t < 0):
            raise DriverExhausted(f"path covers [0, {self.T}], asked for t in [{t.min()}, {t.max()}]")
        s = np.clip(t / self.dt, 0, self.n_steps)
        k = np.minimum(np.floor(s).astype(int), self.n_steps - 1)
        frac = s - k
        v = self.values
        return v[..., k] * (1 - frac) + v[..., np.minimum(k + 1, self.n_steps)] * frac

    def scaled(self, c: float) -> NoisePath:
        return NoisePath(self.dt, c * self.values, self.kind, dict(self.params), self.seed)


def brownian_path(T: float, dt: float, mu: float = 0.0, seed=None, n_paths: int | None = None) -> NoisePath:
    """Cumulative sums of independent N(mu dt, dt) increments, starting at 0."""
    n, dt = _grid(T, dt)
    rng = make_rng(seed)
    shape = (n,) if n_paths is None else (n_paths, n)
    inc = rng.normal(mu * dt, math.sqrt(dt), size=shape)
    values = np.concatenate([np.zeros(shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    return NoisePath(dt, values, "brownian", {"mu": mu}, seed if isinstance(seed, int) else None)


def ou_path(
    gamma: float,
    s: float,
    T: float,
    dt: float,
    seed=None,
    n_paths: int | None = None,
    driver_increments: np.ndarray | None = None,
) -> NoisePath:
    """Stationary Ornstein-Uhlenbeck process ``dm = -gamma m dt + s dW``.

    Exact discretization with ``m_0`` drawn from N(0, s^2/(2 gamma)).  When
    ``driver_increments`` (the increments of W on the same grid) are given,
    the innovations are the exact stochastic integrals against that W, so
    the path is coupled to the supplied Brownian motion.
    """
    if not (gamma > 0 and s > 0):
        raise ValueError("gamma and s must be positive")
    n, dt = _grid(T, dt)
    rng = make_rng(seed)
    batch = () if n_paths is None else (n_paths,)
    a = math.exp(-gamma * dt)
    var_eta = s**2 * (1 - a**2) / (2 * gamma)
    if driver_increments is None:
        eta = rng.normal(0.0, math.sqrt(var_eta), size=batch + (n,))
    else:
        dW = np.asarray(driver_increments, dtype=float)
        if dW.shape != batch + (n,):
            raise ValueError(f"driver increments have shape {dW.shape}, expected {batch + (n,)}")
        c = s * (1 - a) / (gamma * dt)
        resid = max(var_eta - c**2 * dt, 0.0)
        eta = c * dW + math.sqrt(resid) * rng.standard_normal(batch + (n,))
    m0 = rng.normal(0.0, s / math.sqrt(2 * gamma), size=batch + (1,))
    x = np.concatenate([m0, eta], axis=-1)
    values = lfilter([1.0], [1.0, -a], x, axis=-1)
    return NoisePath(dt, values, "ou", {"gamma": gamma, "s": s}, seed if isinstance(seed, int) else None)


def telegraph_path(rate: float, amplitude: float, T: float, dt: float, seed=None, n_paths: int | None = None) -> NoisePath:
    """Symmetric two-state process on {-amplitude, +amplitude} flipping at ``rate``.

    Sampled exactly on the grid: the sign flips between grid points with
    probability ``(1 - exp(-2 rate dt)) / 2``.  Its covariance is
    ``amplitude^2 exp(-2 rate |t|)``.
    """
    if not (rate > 0 and amplitude > 0):
        raise ValueError("rate and amplitude must be positive")
    n, dt = _grid(T, dt)
    rng = make_rng(seed)
    batch = () if n_paths is None else (n_paths,)
    p = (1 - math.exp(-2 * rate * dt)) / 2
    start = rng.choice([-1.0, 1.0], size=batch + (1,))
    flips = np.where(rng.random(batch + (n,)) < p, -1.0, 1.0)
    values = amplitude * np.cumprod(np.concatenate([start, flips], axis=-1), axis=-1)
    return NoisePath(dt, values, "telegraph", {"rate": rate, "amplitude": amplitude}, seed if isinstance(seed, int) else None)


def constant_path(c: float, T: float, dt: float) -> NoisePath:
    n, dt = _grid(T, dt)
    return NoisePath(dt, np.full(n + 1, float(c)), "constant", {"c": c})


def scaled_dispersion_integral(m: NoisePath, eps: float, t) -> np.ndarray:
    """``beta_eps(t) = int_0^t m(s/eps^2)/eps ds = eps int_0^(t/eps^2) m(u) du``.

    Trapezoidal rule on the grid of ``m``; a final partial cell is integrated
    against the linear interpolant.  ``t`` may be an array.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    t = np.asarray(t, dtype=float)
    tau = t / eps**2
    if np.any(tau > m.T * (1 + 1e-12) + 1e-12):
        raise DriverExhausted(f"m covers [0, {m.T}] but t/eps^2 reaches {tau.max():.6g}")
    v = m.values
    cum = cumulative_trapezoid(v, dx=m.dt, axis=-1, initial=0.0)
    s = np.clip(tau / m.dt, 0, m.n_steps)
    k = np.minimum(np.floor(s).astype(int), m.n_steps - 1)
    frac = s - k
    left = v[..., k]
    right = v[..., k + 1]
    partial = m.dt * frac * (left + (left + frac * (right - left))) / 2
    return eps * (cum[..., k] + partial)


def scaled_driver(m: NoisePath, eps: float, times: np.ndarray) -> np.ndarray:
    """``beta_eps`` sampled at ``times`` (alias used by the solvers)."""
    return scaled_dispersion_integral(m, eps, times)


def ou_diffusion_variance(gamma: float, s: float, eps: float, t: float = 1.0) -> float:
    """Exact ``Var[beta_eps(t)]`` for the stationary OU process.

    ``(s/gamma)^2 [t - eps^2 (1 - exp(-gamma t/eps^2)) / gamma]``, which tends
    to ``(s/gamma)^2 t`` as eps -> 0.
    """
    tau = t / eps**2
    return (s / gamma) ** 2 * (t - eps**2 * (1 - math.exp(-gamma * tau)) / gamma)
