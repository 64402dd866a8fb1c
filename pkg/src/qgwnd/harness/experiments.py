"""Experiment drivers behind ``run_experiment`` and the statistics they use."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats
from scipy.ndimage import gaussian_filter1d

from ..coupling import count_negative_eigs_predicted, parse_coupling
from ..dynamics import SolverConfig, is_admissible, picard_solve, solve_with_driver
from ..graph import Mesh, build_graph, discretize, edge_derivative, lp_norm
from ..noise import (
    NoisePath,
    constant_path,
    make_rng,
    ou_path,
    scaled_dispersion_integral,
    telegraph_path,
    trial_seed,
)
from ..propagation import (
    PropagatorContext,
    decay_ratio,
    evolve_many,
    schrodinger_group,
    star_derivative_rhs,
)
from ..spectral import assemble, eigendecompose, project_continuous
from .config import ExperimentConfig
from .records import ReportRecord, build_id, write_records, write_series

__all__ = [
    "run_experiment",
    "build_context",
    "make_datum",
    "fit_decay_slope",
    "DecayFit",
    "strichartz_beta",
    "strichartz_ratio",
    "ks_distance",
    "invariance_variance",
    "converge_eps",
    "driver_continuity",
    "star_formula_errors",
    "worker_count",
    "diffusion_constant",
]

CHUNK = 25


def worker_count(requested: int | None = None) -> int:
    """Thread count: ``requested`` capped by the ``QGWND_THREADS`` variable."""
    cap = int(os.environ.get("QGWND_THREADS", "1") or 1)
    n = cap if requested is None else min(requested, cap)
    return max(1, n)


def _map_chunks(fn: Callable[[int, int], object], n: int, workers: int, chunk: int = CHUNK) -> list:
    """``fn(start, stop)`` over fixed trial chunks, results in chunk order.

    Chunk boundaries do not depend on the worker count, so results are the
    same for any number of threads.
    """
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if workers <= 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def _trial_rng(seed: int, i: int, stream: int = 0) -> np.random.Generator:
    if stream == 0:
        return np.random.default_rng(trial_seed(seed, i))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(i), int(stream))))


# ---------------------------------------------------------------- building


def _couplings(cfg: ExperimentConfig, mesh: Mesh) -> dict:
    g = mesh.graph
    out = {}
    given = {str(c["vertex"]): c for c in cfg.couplings}
    unknown = set(given) - {str(v) for v in g.vertices}
    if unknown:
        raise ValueError(f"couplings name unknown vertices: {sorted(unknown)}")
    for v in g.vertices:
        spec = given.get(str(v), cfg.default_coupling)
        out[v] = parse_coupling(spec, g.degree(v))
    return out


def build_context(cfg: ExperimentConfig, h: float | None = None) -> PropagatorContext:
    g = build_graph(cfg.graph_spec())
    mp = cfg.mesh_params()
    mesh = discretize(g, h or mp["h"], mp["L_trunc"], mp["far_end"], mp.get("h_overrides"))
    op = assemble(mesh, _couplings(cfg, mesh), mp["mass"])
    return PropagatorContext.build(eigendecompose(op))


def make_datum(ctx: PropagatorContext, spec: dict) -> np.ndarray:
    """Initial datum, L^2-projected onto the constrained space.

    kinds:
      ``gaussian``: ``amplitude exp(-((x - center)/width)^2) exp(i k x)`` on
      ``edge`` (index, or ``"all"``);
      ``vertex_flat``: ``b exp(-x^4)(1 + slope x) + c_j x^4 exp(-(x - 1.5)^2)``,
      flat at the vertex (``slope`` defaults to alpha/n for delta couplings);
      ``eigenmode``: eigenvector ``index`` (negative counts from the bottom of
      the point spectrum);
      ``constant``: ``value`` everywhere; ``zero``.
    """
    mesh = ctx.mesh
    kind = spec.get("kind", "gaussian")
    if kind == "zero":
        return mesh.zeros()
    if kind == "eigenmode":
        idx = int(spec.get("index", 0))
        return ctx.sd.modes[:, idx].astype(complex) * spec.get("amplitude", 1.0)
    if kind == "constant":
        f = mesh.sample(lambda e, x: spec.get("value", 1.0) + 0 * x)
    elif kind == "gaussian":
        amp = float(spec.get("amplitude", 1.0))
        c = float(spec.get("center", 2.0))
        w = float(spec.get("width", 1.0))
        k = float(spec.get("k", 0.0))
        edge = spec.get("edge", 0)

        def f_e(e, x):
            on = edge == "all" or int(edge) == e
            return on * amp * np.exp(-(((x - c) / w) ** 2)) * np.exp(1j * k * x)

        f = mesh.sample(f_e)
    elif kind == "vertex_flat":
        b = float(spec.get("b", 1.0))
        cs = list(spec.get("c", [1.0, -0.5, 0.3]))
        slope = spec.get("slope")
        if slope is None:
            slope = 0.0
            if ctx.star is not None and ctx.star.alpha:
                slope = ctx.star.alpha / ctx.star.n
        cs = (cs * mesh.n_edges)[: mesh.n_edges]
        f = mesh.sample(lambda e, x: b * np.exp(-(x**4)) * (1 + slope * x) + cs[e] * x**4 * np.exp(-((x - 1.5) ** 2)))
    else:
        raise ValueError(f"unknown datum kind {kind!r}")
    return ctx.sd.synthesize(ctx.sd.coefficients(f))


# ---------------------------------------------------------------- statistics


class DecayFit(NamedTuple):
    slope: float
    stderr: float
    intercept: float


def fit_decay_slope(t: Sequence[float], y: Sequence[float]) -> DecayFit:
    """Least-squares slope of log y against log t."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 5 or t.size != y.size:
        raise ValueError("need at least 5 (t, y) pairs")
    if np.any(t <= 0) or np.any(y <= 0):
        raise ValueError("t and y must be positive")
    if np.ptp(np.log(t)) == 0:
        raise ValueError("degenerate series: all times equal")
    res = stats.linregress(np.log(t), np.log(y))
    return DecayFit(float(res.slope), float(res.stderr), float(res.intercept))


def strichartz_beta(r: float, p: float) -> float:
    """``2/r - (1/2)(1/2 - 1/p)``."""
    return (0.0 if math.isinf(r) else 2 / r) - 0.5 * (0.5 - 1 / p)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    return float(stats.ks_2samp(a, b).statistic)


def diffusion_constant(noise: dict) -> float:
    """``2 int_0^inf Cov(m_0, m_t) dt`` for the supported stationary processes."""
    kind = noise.get("kind", "ou")
    if kind == "ou":
        return (noise.get("s", 1.0) / noise.get("gamma", 1.0)) ** 2
    if kind == "telegraph":
        return noise.get("amplitude", 1.0) ** 2 / noise.get("rate", 1.0)
    return 0.0


def _noise_path(noise: dict, T: float, du: float, rng, n_paths=None, driver_increments=None) -> NoisePath:
    kind = noise.get("kind", "ou")
    if kind == "ou":
        return ou_path(noise.get("gamma", 1.0), noise.get("s", 1.0), T, du, rng, n_paths, driver_increments)
    if kind == "telegraph":
        return telegraph_path(noise.get("rate", 1.0), noise.get("amplitude", 1.0), T, du, rng, n_paths)
    c = 0.0 if kind == "zero" else float(noise.get("c", 1.0))
    p = constant_path(c, T, du)
    if n_paths is not None:
        p = NoisePath(p.dt, np.broadcast_to(p.values, (n_paths, p.values.size)).copy(), p.kind, p.params)
    return p


# ---------------------------------------------------------------- experiments


def strichartz_ratio(
    ctx: PropagatorContext,
    X0: np.ndarray,
    r: float,
    p: float,
    T: float,
    trials: int,
    seed: int,
    n_time: int = 64,
    workers: int = 1,
) -> tuple[float, float]:
    """MC estimate of ``(E |S X0|^r_{L^r_t L^p_x})^{1/r} / (T^{beta/2} |X0|_2)``.

    Returns ``(ratio, stderr)``; for ``r = inf`` the expectation becomes the
    maximum over trials.
    """
    if not is_admissible(r, p):
        raise ValueError(f"({r}, {p}) is not an admissible pair")
    mesh = ctx.mesh
    sd = ctx.sd
    a0 = sd.coefficients(X0)
    times = np.linspace(0.0, T, n_time + 1)
    norm0 = float(lp_norm(mesh, X0, 2))

    def chunk(start, stop):
        out = []
        for i in range(start, stop):
            rng = _trial_rng(seed, i)
            beta = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, math.sqrt(T / n_time), n_time))])
            states = sd.synthesize(np.exp(-1j * np.outer(beta, sd.eigenvalues)) * a0)
            pn = lp_norm(mesh, states, p)
            out.append(pn.max() if math.isinf(r) else np.trapezoid(pn**r, times))
        return out

    Y = np.concatenate(_map_chunks(chunk, trials, workers))
    scale = T ** (strichartz_beta(r, p) / 2) * norm0
    if math.isinf(r):
        return float(Y.max() / scale), 0.0
    mean = Y.mean()
    se = Y.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
    ratio = mean ** (1 / r) / scale
    return float(ratio), float(ratio * se / (r * mean))


def invariance_variance(
    noise: dict,
    eps: float,
    trials: int,
    seed: int,
    t: float = 1.0,
    du: float = 0.02,
    workers: int = 1,
    control_variate: bool = True,
) -> tuple[float, float]:
    """Estimate ``Var[beta_eps(t)]`` and its standard error.

    For OU noise the path is driven by an explicit Brownian motion W, and
    ``Z = eps s W(t/eps^2)/gamma``, exactly N(0, (s/gamma)^2 t), serves as a
    control variate: the estimator is ``mean(beta^2 - Z^2) + (s/gamma)^2 t``.
    """
    tau = t / eps**2
    n = max(1, int(math.ceil(tau / du - 1e-9)))
    cv = control_variate and noise.get("kind", "ou") == "ou"
    target = diffusion_constant(noise) * t

    def chunk(start, stop):
        vals = []
        for i in range(start, stop):
            rng = _trial_rng(seed, i)
            if cv:
                dW = rng.normal(0.0, math.sqrt(tau / n), n)
                m = _noise_path(noise, tau, tau / n, rng, driver_increments=dW)
                b = float(scaled_dispersion_integral(m, eps, t))
                z = eps * noise.get("s", 1.0) * dW.sum() / noise.get("gamma", 1.0)
                vals.append(b * b - z * z)
            else:
                m = _noise_path(noise, tau, tau / n, rng)
                b = float(scaled_dispersion_integral(m, eps, t))
                vals.append(b * b)
        return vals

    v = np.concatenate(_map_chunks(chunk, trials, workers))
    est = v.mean() + (target if cv else 0.0)
    se = v.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
    return float(est), float(se)


def _observable(ctx: PropagatorContext, states: np.ndarray, spec: dict | None) -> np.ndarray:
    spec = spec or {"kind": "l4"}
    kind = spec.get("kind", "l4")
    mesh = ctx.mesh
    if kind == "l4":
        return np.asarray(lp_norm(mesh, states, 4))
    if kind == "form":
        sd = ctx.sd
        a = sd.coefficients(states)
        return np.sqrt(np.maximum((np.abs(a) ** 2) @ (sd.M_shift + sd.eigenvalues), 0.0))
    if kind == "probe":
        e = int(spec.get("edge", 0))
        x = mesh.nodes[e]
        node = int(np.argmin(np.abs(x - float(spec.get("x", 0.0)))))
        return np.abs(states[..., mesh.index(e, node)])
    raise ValueError(f"unknown observable {kind!r}")


def _stopped(cfg: SolverConfig, traj) -> np.ndarray:
    """Trials that blew up or left the region where the truncation is inactive."""
    stop = np.asarray(traj.stopped, dtype=bool).copy()
    t = cfg.truncation
    if t.kind == "pointwise":
        stop |= np.max(traj.linf, axis=-1) ** 2 > t.R
    elif t.kind == "norm" and tuple(cfg.pair) == (t.r, t.p):
        stop |= traj.running_rp[..., -1] > t.R
    return stop


def converge_eps(
    ctx: PropagatorContext,
    X0: np.ndarray,
    cfg: SolverConfig,
    eps_values: Sequence[float],
    trials: int,
    seed: int,
    noise: dict | None = None,
    ds: float = 1e-5,
    observable: dict | None = None,
    workers: int = 1,
) -> list[dict]:
    """Random-dispersion ensembles against a white-noise-dispersion ensemble.

    Trial i of every ensemble uses the same Brownian motion B_i on the base
    grid ``ds``.  The reference driver is ``sqrt(D) B_i`` with D the
    diffusion constant of the noise.  For OU noise, the process m for a given
    eps is driven by ``W(u) = B_i(eps^2 u)/eps`` (its grid step is
    ``ds/eps^2``), which couples the ensembles trial by trial; other noises
    are drawn independently.  Returns one dict per eps with the KS distance of
    the observable at T and the fraction of stopped trials.
    """
    noise = noise or {"kind": "ou", "gamma": 1.0, "s": 1.0}
    T = cfg.T
    nb = int(round(T / ds))
    if not math.isclose(nb * ds, T, rel_tol=1e-9):
        raise ValueError("T must be a multiple of the base step ds")
    stride = int(round(cfg.dt / ds))
    if not math.isclose(stride * ds, cfg.dt, rel_tol=1e-9) or not math.isclose(stride * cfg.n_steps, nb):
        raise ValueError("the solver step must be a multiple of the base step ds")
    D = diffusion_constant(noise)

    def increments(start, stop):
        return np.stack([_trial_rng(seed, i).normal(0.0, math.sqrt(ds), nb) for i in range(start, stop)])

    def reference(start, stop):
        dB = increments(start, stop)
        B = np.concatenate([np.zeros((stop - start, 1)), np.cumsum(dB, axis=1)], axis=1)
        tr = solve_with_driver(ctx, X0, cfg, math.sqrt(D) * B[:, ::stride], keep_states=True, with_form=False)
        return _observable(ctx, tr.final, observable), _stopped(cfg, tr)

    ref = _map_chunks(reference, trials, workers)
    ref_obs = np.concatenate([r[0] for r in ref])
    ref_stop = np.concatenate([r[1] for r in ref])

    results = []
    for j, eps in enumerate(eps_values):

        def perturbed(start, stop, eps=eps, j=j):
            dB = increments(start, stop)
            rng = _trial_rng(seed, start, stream=1 + j)
            coupled = noise.get("kind", "ou") == "ou"
            m = _noise_path(
                noise, T / eps**2, ds / eps**2, rng, n_paths=stop - start, driver_increments=dB / eps if coupled else None
            )
            drv = scaled_dispersion_integral(m, eps, cfg.times)
            tr = solve_with_driver(ctx, X0, cfg, drv, keep_states=True, with_form=False)
            return _observable(ctx, tr.final, observable), _stopped(cfg, tr)

        out = _map_chunks(perturbed, trials, workers)
        obs = np.concatenate([o[0] for o in out])
        stop = np.concatenate([o[1] for o in out])
        results.append(
            {
                "eps": float(eps),
                "ks": ks_distance(obs, ref_obs),
                "stop_fraction": float(stop.mean()),
                "stop_stderr": float(stop.std() / math.sqrt(trials)),
                "reference_stop_fraction": float(ref_stop.mean()),
                "mean_observable": float(obs.mean()),
                "reference_mean_observable": float(ref_obs.mean()),
            }
        )
    return results


def mollify(values: np.ndarray, dt: float, width: float) -> np.ndarray:
    """Gaussian smoothing of a sampled path at time scale ``width``."""
    if width <= 0:
        return np.array(values, dtype=float)
    return gaussian_filter1d(np.asarray(values, dtype=float), width / dt, mode="nearest")


def driver_continuity(
    ctx: PropagatorContext,
    X0: np.ndarray,
    cfg: SolverConfig,
    widths: Sequence[float],
    seed: int,
) -> list[dict]:
    """Sup-in-time form-norm distance between Picard solutions for mollified
    Brownian drivers and for the raw driver."""
    rng = make_rng(seed)
    B = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, math.sqrt(cfg.dt), cfg.n_steps))])
    base = picard_solve(ctx, X0, B, cfg)
    sd = ctx.sd
    a_base = sd.coefficients(base.states)
    out = []
    for w in widths:
        n_w = mollify(B, cfg.dt, w)
        sol = picard_solve(ctx, X0, n_w, cfg)
        diff = sd.coefficients(sol.states) - a_base
        dist = np.sqrt(np.maximum((np.abs(diff) ** 2) @ (sd.M_shift + sd.eigenvalues), 0.0)).max()
        out.append({"width": float(w), "driver_sup": float(np.abs(n_w - B).max()), "form_distance": float(dist)})
    return out


def star_formula_errors(
    cfg: ExperimentConfig, h_values: Sequence[float], t: float, L_obs: float = 4.0
) -> list[dict]:
    """Relative L^2 error on ``[0, L_obs]`` of every edge between the
    finite-difference derivative of ``U(t) v`` and the star formula."""
    out = []
    for h in h_values:
        ctx = build_context(cfg, h=h)
        mesh = ctx.mesh
        v = make_datum(ctx, cfg.datum if cfg.datum.get("kind") != "gaussian" else {"kind": "vertex_flat"})
        lhs = edge_derivative(mesh, schrodinger_group(ctx, t, v))
        rhs = star_derivative_rhs(ctx, t, v)
        w = mesh.weights * (mesh.coordinates() <= L_obs)
        err = math.sqrt(np.sum(w * np.abs(lhs - rhs) ** 2) / np.sum(w * np.abs(lhs) ** 2))
        out.append({"h": float(h), "rel_error": err, "n_point": int(ctx.sd.point.size)})
    return out


# ---------------------------------------------------------------- dispatcher


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"build_id": build_id(cfg.as_dict()), "seed": cfg.seed}


def _monotone_record(kind, name, values, prov, params=None, extras=None) -> ReportRecord:
    """Largest ratio of consecutive values; passes when below one (strict decrease)."""
    values = np.asarray(values, dtype=float)
    ratios = values[1:] / np.maximum(values[:-1], 1e-300)
    return ReportRecord(
        kind,
        name,
        float(ratios.max()),
        params=params or {},
        upper=1.0 - 1e-12,
        extras={"values": values.tolist(), **(extras or {})},
        provenance=prov,
    )


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, workers: int | None = None) -> list[ReportRecord]:
    """Run one configured experiment, write its CSV/JSON files, return records."""
    runner = _RUNNERS[cfg.kind]
    workers = worker_count(workers)
    prov = _provenance(cfg)
    records, header, rows = runner(cfg, prov, workers)
    target = out_dir or cfg.output.get("dir")
    if target is not None:
        target = Path(target)
        write_records(target / f"{cfg.kind}.json", records)
        if header:
            write_series(target / f"{cfg.kind}.csv", header, rows)
    return records


def _run_spectrum(cfg, prov, workers):
    ctx = build_context(cfg)
    sd = ctx.sd
    g = ctx.mesh.graph
    predicted = sum(count_negative_eigs_predicted(c.A, c.B) for c in sd.op.couplings.values())
    p = cfg.params
    recs = [
        ReportRecord("spectrum", "n_neg_predicted", predicted, provenance=prov, extras={"exact_for_star": g.is_star()}),
        ReportRecord(
            "spectrum",
            "n_neg_discrete",
            sd.point.size,
            lower=predicted if g.is_star() else None,
            upper=predicted if g.is_star() else None,
            provenance=prov,
            extras={"split_is_exact": sd.split_is_exact},
        ),
        ReportRecord("spectrum", "lambda_min", sd.eigenvalues[0], provenance=prov),
        ReportRecord("spectrum", "M_shift", sd.M_shift, provenance=prov),
    ]
    if "expected_lambda" in p:
        tol = float(p.get("tol", 5e-3))
        lam = float(p["expected_lambda"])
        recs.append(ReportRecord("spectrum", "lambda_point", sd.eigenvalues[0], lower=lam - tol, upper=lam + tol, provenance=prov))
    n_rows = int(p.get("n_rows", sd.eigenvalues.size))
    rows = [(k, float(lam), int(k in set(sd.point.tolist()))) for k, lam in enumerate(sd.eigenvalues[:n_rows])]
    if cfg.output.get("eigenvectors") and cfg.output.get("dir"):
        n_vec = int(p.get("n_eigenvectors", 10))
        mesh = ctx.mesh
        vrows = [
            (int(e), float(x), *[float(v) for v in np.real(sd.modes[i, :n_vec])])
            for i, (e, x) in enumerate(zip(mesh.edge_ids(), mesh.coordinates()))
        ]
        write_series(Path(cfg.output["dir"]) / "eigenvectors.csv", ["edge", "x", *[f"phi_{k}" for k in range(n_vec)]], vrows)
    return recs, ["index", "lambda", "is_point"], rows


def _run_propagate(cfg, prov, workers):
    ctx = build_context(cfg)
    X0 = make_datum(ctx, cfg.datum)
    ts = np.atleast_1d(np.asarray(cfg.params["t"], dtype=float))
    mesh = ctx.mesh
    n0 = float(lp_norm(mesh, X0, 2))
    states = evolve_many(ctx, ts, X0)
    recs = []
    rows = []
    for t, u in zip(ts, states):
        ratio = float(lp_norm(mesh, u, 2)) / n0 if n0 else 1.0
        recs.append(ReportRecord("propagate", f"l2_ratio_t={t:g}", ratio, {"t": t}, lower=1 - 1e-10, upper=1 + 1e-10, provenance=prov))
        if t == 0:
            recs.append(ReportRecord("propagate", "field_change_t=0", np.abs(u - X0).max(), {"t": 0.0}, upper=1e-12, provenance=prov))
        if cfg.output.get("fields", True):
            for e, x, val in zip(mesh.edge_ids(), mesh.coordinates(), u):
                rows.append((float(t), int(e), float(x), float(val.real), float(val.imag)))
    return recs, ["t", "edge", "x", "re", "im"], rows


def _run_decay_fit(cfg, prov, workers):
    ctx = build_context(cfg)
    X0 = make_datum(ctx, cfg.datum)
    p = cfg.params
    ts = np.geomspace(float(p["t_min"]), float(p["t_max"]), int(p.get("n_times", 20)))
    project = bool(p.get("project", True))
    g = project_continuous(ctx.sd, X0) if project else X0
    sup = lp_norm(ctx.mesh, evolve_many(ctx, ts, g), math.inf)
    fit = fit_decay_slope(ts, sup)
    lo, hi = p.get("bounds", [-0.65, -0.35])
    flags = [decay_ratio(ctx, X0, t, project) for t in ts]
    recs = [
        ReportRecord("decay_fit", "slope", fit.slope, {"project": project}, fit.stderr, lo, hi, provenance=prov),
        ReportRecord("decay_fit", "max_ratio", max(f.ratio for f in flags), provenance=prov,
                     extras={"all_in_window": all(f.in_window for f in flags)}),
    ]
    rows = [(float(t), float(s), float(f.ratio), int(f.in_window)) for t, s, f in zip(ts, sup, flags)]
    return recs, ["t", "sup_norm", "decay_ratio", "in_window"], rows


def _run_strichartz(cfg, prov, workers):
    ctx = build_context(cfg)
    X0 = make_datum(ctx, cfg.datum)
    p = cfg.params
    r, pp = (math.inf if str(p["r"]) == "inf" else float(p["r"])), float(p["p"])
    n_time = int(p.get("n_time", 64))
    recs, rows, ratios = [], [], []
    for T in p["T_values"]:
        ratio, se = strichartz_ratio(ctx, X0, r, pp, float(T), cfg.trials, cfg.seed, n_time, workers)
        ratios.append(ratio)
        rows.append((float(T), ratio, se))
        bounds = (1 - 1e-8, 1 + 1e-8) if math.isinf(r) else (None, None)
        recs.append(ReportRecord("strichartz", f"ratio_T={T:g}", ratio, {"r": r, "p": pp, "T": T}, se, *bounds, provenance=prov))
    spread = max(ratios) / min(ratios)
    recs.append(ReportRecord("strichartz", "ratio_spread", spread, {"r": r, "p": pp}, upper=float(p.get("max_spread", 2.0)),
                             provenance=prov, extras={"beta": strichartz_beta(r, pp)}))
    return recs, ["T", "value", "stderr"], rows


def _trial_paths(cfg: ExperimentConfig, scfg: SolverConfig, start: int, stop: int) -> np.ndarray:
    n = scfg.n_steps
    out = np.empty((stop - start, n + 1))
    for k, i in enumerate(range(start, stop)):
        rng = _trial_rng(cfg.seed, i)
        out[k] = np.concatenate([[0.0], np.cumsum(rng.normal(scfg.mu * scfg.T / n, math.sqrt(scfg.T / n), n))])
    return out


def _trajectory_rows(traj, trial_offset=0):
    rows = []
    l2 = np.atleast_2d(traj.l2)
    form = np.atleast_2d(traj.form) if traj.form is not None else np.full_like(l2, np.nan)
    linf = np.atleast_2d(traj.linf)
    rp = np.atleast_2d(traj.running_rp)
    for k in range(l2.shape[0]):
        for j, t in enumerate(traj.times):
            rows.append((trial_offset + k, float(t), float(l2[k, j]), float(form[k, j]), float(linf[k, j]), float(rp[k, j])))
    return rows


def _run_nlse(cfg, prov, workers, random_dispersion: bool):
    ctx = build_context(cfg)
    X0 = make_datum(ctx, cfg.datum)
    scfg = cfg.solver_config()
    p = cfg.params
    eps = float(p.get("eps", 1.0))
    du = float(p.get("du", 0.01))

    def chunk(start, stop):
        if random_dispersion:
            m = np.stack(
                [_noise_path(cfg.noise, scfg.T / eps**2, du, _trial_rng(cfg.seed, i)).values for i in range(start, stop)]
            )
            drv = scaled_dispersion_integral(NoisePath(du, m, cfg.noise.get("kind", "ou")), eps, scfg.times)
        else:
            drv = _trial_paths(cfg, scfg, start, stop)
        tr = solve_with_driver(ctx, X0, scfg, drv, keep_states=False, with_form=True)
        return tr, start

    parts = _map_chunks(chunk, cfg.trials, workers)
    drift = max(float(np.max(tr.l2_drift())) for tr, _ in parts)
    stopped = np.concatenate([np.atleast_1d(tr.stopped) for tr, _ in parts])
    kind = "nlse_random" if random_dispersion else "nlse_wnd"
    recs = [
        ReportRecord(kind, "l2_drift", drift, {"dt": scfg.dt, "T": scfg.T}, upper=float(p.get("drift_tol", 1e-8)), provenance=prov),
        ReportRecord(kind, "blowup_fraction", stopped.mean(), provenance=prov),
    ]
    rows = []
    for tr, start in parts:
        rows.extend(_trajectory_rows(tr, start))
    return recs, ["trial", "t", "l2_norm", "form_norm", "linf_norm", "running_rp_norm"], rows


def _run_invariance(cfg, prov, workers):
    p = cfg.params
    t = float(p.get("t", 1.0))
    du = float(p.get("du", 0.02))
    target = diffusion_constant(cfg.noise) * t
    recs, rows, errors = [], [], []
    for eps in p["eps"]:
        est, se = invariance_variance(cfg.noise, float(eps), cfg.trials, cfg.seed, t, du, workers)
        errors.append(abs(est - target))
        rows.append((float(eps), est, se))
        recs.append(ReportRecord("invariance", f"variance_eps={eps:g}", est, {"eps": eps, "t": t}, se,
                                 target - 3 * se, target + 3 * se, provenance=prov, extras={"target": target}))
    if len(errors) > 1 and target > 0:
        recs.append(_monotone_record("invariance", "error_shrinks", errors, prov))
    return recs, ["eps", "value", "stderr"], rows


def _run_converge_eps(cfg, prov, workers):
    ctx = build_context(cfg)
    X0 = make_datum(ctx, cfg.datum)
    scfg = cfg.solver_config()
    p = cfg.params
    res = converge_eps(ctx, X0, scfg, p["eps"], cfg.trials, cfg.seed, cfg.noise, float(p.get("ds", 1e-5)),
                       p.get("observable"), workers)
    recs = [ReportRecord("converge_eps", f"ks_eps={r['eps']:g}", r["ks"], {"eps": r["eps"]}, provenance=prov, extras=r) for r in res]
    recs.append(_monotone_record("converge_eps", "ks_decreasing", [r["ks"] for r in res], prov))
    stops = [r["stop_fraction"] for r in res]
    recs.append(ReportRecord("converge_eps", "stop_fraction_max_increase", max(np.diff(stops), default=0.0),
                             upper=float(p.get("stop_slack", 0.0)), provenance=prov, extras={"stop_fractions": stops}))
    rows = [(r["eps"], r["ks"], r["stop_fraction"], r["stop_stderr"]) for r in res]
    return recs, ["eps", "ks", "stop_fraction", "stop_stderr"], rows


def _run_driver_continuity(cfg, prov, workers):
    ctx = build_context(cfg)
    X0 = make_datum(ctx, cfg.datum)
    scfg = cfg.solver_config()
    res = driver_continuity(ctx, X0, scfg, cfg.params["widths"], cfg.seed)
    recs = [ReportRecord("driver_continuity", f"distance_w={r['width']:g}", r["form_distance"], provenance=prov, extras=r)
            for r in res]
    recs.append(_monotone_record("driver_continuity", "distance_decreasing", [r["form_distance"] for r in res], prov))
    rows = [(r["width"], r["driver_sup"], r["form_distance"]) for r in res]
    return recs, ["width", "driver_sup", "form_distance"], rows


def _run_star_formula(cfg, prov, workers):
    p = cfg.params
    res = star_formula_errors(cfg, p["h_values"], float(p["t"]), float(p.get("L_obs", 4.0)))
    recs = [ReportRecord("star_formula", f"rel_error_h={r['h']:g}", r["rel_error"], {"h": r["h"]}, provenance=prov)
            for r in res]
    recs.append(_monotone_record("star_formula", "error_decreasing", [r["rel_error"] for r in res], prov))
    recs.append(ReportRecord("star_formula", "final_error", res[-1]["rel_error"], upper=float(p.get("tol", 5e-2)), provenance=prov))
    return recs, ["h", "rel_error"], [(r["h"], r["rel_error"]) for r in res]


_RUNNERS = {
    "spectrum": _run_spectrum,
    "propagate": _run_propagate,
    "decay_fit": _run_decay_fit,
    "strichartz": _run_strichartz,
    "nlse_wnd": lambda c, p, w: _run_nlse(c, p, w, False),
    "nlse_random": lambda c, p, w: _run_nlse(c, p, w, True),
    "invariance": _run_invariance,
    "converge_eps": _run_converge_eps,
    "driver_continuity": _run_driver_continuity,
    "star_formula": _run_star_formula,
}

