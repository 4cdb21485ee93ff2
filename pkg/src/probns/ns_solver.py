"""Vorticity fixed point: the NS map, the BS map, the admissible horizon and Picard iteration.

The NS map sends a velocity ``u`` to the vorticity

    xi(t, x) = E[U_t xi0(X_t)] + int_0^t E[U_s g(t - s, X_s)] ds

along the Lagrangian paths of ``u``.  The BS map recovers a velocity from a
vorticity.  On a short enough horizon their composition is a contraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimate import MCEstimate
from .fields import GridField, NormReport, VectorField, ZeroField, estimate_norms
from .kernel import check_mode, deformation_tensor, integrate_paths, log_girsanov_step
from .potential import DensityField, TimeQuadrature, _bs_samples
from .rng import BrownianDriver, TimeGrid


class NoAdmissibleTau(ValueError):
    """Even an infinitesimal horizon violates the growth condition (``eps0 > L``)."""


@dataclass
class NSProblem:
    """Data of the vorticity problem.

    ``xi0`` is the initial vorticity, ``g`` the curl of the forcing (``None``
    for no forcing).  ``eps0`` is the data size; call :meth:`data_size` to
    estimate it on a box.
    """

    nu: float
    alpha: float
    p: float
    T: float
    xi0: VectorField
    g: VectorField | None = None
    eps0: float | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 1.0 <= self.p < 1.5:
            raise ValueError("p must lie in [1, 3/2)")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("T must be finite and positive")
        if self.eps0 is not None and not (math.isfinite(self.eps0) and self.eps0 >= 0):
            raise ValueError("eps0 must be finite and nonnegative")

    def data_size(self, R: float, h: float, n_pairs: int = 2048, seed: int = 0, n_time: int = 5) -> float:
        """``||xi0||_{C^alpha_b & L^p} + int_0^T ||g(s)|| ds`` on the box ``[-R, R]^3``."""
        e = estimate_norms(self.xi0, self.alpha, self.p, R, h, n_pairs, 0.0, seed).combined
        if self.g is not None:
            ts = np.linspace(0.0, self.T, n_time)
            vals = [estimate_norms(self.g, self.alpha, self.p, R, h, n_pairs, float(s), seed).combined
                    for s in ts]
            e += float(np.trapezoid(vals, ts))
        self.eps0 = e
        return e


# ---------------------------------------------------------------------------
# NS map


def ns_map(u: VectorField, problem: NSProblem, t: float, x, grid: TimeGrid | None,
           driver: BrownianDriver, n_samples: int, mode: str = "symmetric",
           method: str = "direct", stream: int = 0) -> MCEstimate:
    """Vorticity at ``(t, x)`` transported and stretched by ``u``.

    ``method="direct"`` follows the drifted Lagrangian paths;
    ``method="girsanov"`` averages over pure Brownian paths ``x + sqrt(2 nu) W``
    weighted by the Girsanov density.  ``x`` may hold several points
    ``(P, 3)``; they share the same noise.
    """
    check_mode(mode)
    if method not in ("direct", "girsanov"):
        raise ValueError("method must be 'direct' or 'girsanov'")
    if t < 0 or t > problem.T * (1 + 1e-12):
        raise ValueError(f"t = {t} outside [0, T = {problem.T}]")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x).reshape(-1, 3)
    if t == 0.0:
        v = problem.xi0.value(0.0, pts)
        est = MCEstimate(v, np.zeros_like(v), n_samples, driver.master_seed, grid, {"exact": True})
        return est[0] if single else est
    if grid is None or not math.isclose(grid.horizon, t, rel_tol=1e-12):
        raise ValueError("grid horizon must equal t")
    s2nu = math.sqrt(2 * problem.nu)
    still = isinstance(u, ZeroField)
    g = problem.g
    ds = grid.ds
    n = grid.n_steps

    def time(k):
        return t - grid.node(k)

    drift = None if still or method == "girsanov" else (lambda k, X: -u.value(time(k), X))
    coupling = None if still else (lambda k, X: deformation_tensor(u.gradient(time(k), X), mode))

    def block(start, count, z):
        dW = z * math.sqrt(ds)
        acc = np.zeros((pts.shape[0], count, 3))
        logZ = np.zeros((pts.shape[0], count))
        out = {}
        weighted = method == "girsanov" and not still

        def on_step(k, X, U):
            w = np.exp(logZ)[..., None] if weighted else None
            if g is not None and k < n:
                gk = g.value(time(k), X)
                term = gk if U is None else np.einsum("...ij,...j->...i", U, gk)
                acc[...] = acc + ds * (term if w is None else w * term)
            if k == n:
                out["X"], out["U"], out["w"] = X, U, w
            elif weighted:
                logZ[...] = logZ + log_girsanov_step(u.value(time(k), X), dW[:, k], problem.nu, ds)

        integrate_paths(pts, grid, dW, drift, s2nu, coupling, 3, on_step, start)
        xi = problem.xi0.value(0.0, out["X"])
        term = xi if out["U"] is None else np.einsum("...ij,...j->...i", out["U"], xi)
        if out["w"] is not None:
            term = out["w"] * term
        return np.swapaxes(term + acc, 0, 1)

    samples = np.concatenate(driver.with_dim(3).map_blocks(block, n_samples, n, stream), axis=0)
    est = MCEstimate.from_samples(samples, driver.master_seed, grid, method=method, mode=mode)
    return est[0] if single else est


# ---------------------------------------------------------------------------
# BS map


def _box_nodes(R: float, h: float) -> np.ndarray:
    n = int(round(2 * R / h)) + 1
    a = -R + h * np.arange(n)
    return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)


def _bs_slice(xi: VectorField, t: float, R: float, h: float, quad: TimeQuadrature,
              driver: BrownianDriver, n_samples: int, p: float, stream: int):
    """Per-sample BS values on the box nodes, shape ``(N, n^3, 3)``."""
    dens = DensityField.from_field(xi, R, h, t, p=p)
    if dens.sup == 0.0:
        n = int(round(2 * R / h)) + 1
        return np.zeros((n_samples, n**3, 3))
    return _bs_samples(dens, _box_nodes(R, h), quad, driver, n_samples, stream)


def bs_map(xi: VectorField, times, R: float, h: float, quad: TimeQuadrature, driver: BrownianDriver,
           n_samples: int, p: float = 1.0, outside: str = "clamp", stream: int = 1) -> GridField:
    """Velocity on the box nodes for each time slice, as a grid field.

    The node standard errors are attached as ``field.std_error`` (same
    shape as ``field.values``).  Gradients of the result come from centred
    differences on the grid.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = int(round(2 * R / h)) + 1
    vals, ses = [], []
    for t in times:
        S = _bs_slice(xi, float(t), R, h, quad, driver, n_samples, p, stream)
        est = MCEstimate.from_samples(S, driver.master_seed, quad)
        vals.append(est.value.reshape(n, n, n, 3))
        ses.append(est.std_error.reshape(n, n, n, 3))
    out = GridField(R, h, times, np.stack(vals), outside)
    out.std_error = np.stack(ses)
    return out


# ---------------------------------------------------------------------------
# Horizon


def cost_model(name_or_fn, M: float = 0.0) -> Callable[[float], float]:
    """Growth model ``C_M(tau)`` with ``C_M(0+) = 0``.

    ``"sqrt_plus_linear"``: ``sqrt(tau) + tau``.
    ``"full"``: ``sqrt(tau) + tau + M tau^{3/2} + M tau^2``.
    """
    if callable(name_or_fn):
        return name_or_fn
    if name_or_fn == "sqrt_plus_linear":
        return lambda tau: math.sqrt(tau) + tau
    if name_or_fn == "full":
        return lambda tau: math.sqrt(tau) + tau + M * tau**1.5 + M * tau**2
    raise ValueError(f"unknown cost model {name_or_fn!r}")


def growth_factor(tau: float, M: float) -> float:
    """``exp(3 tau M) (1 + tau M)``."""
    return math.exp(3 * tau * M) * (1 + tau * M)


def compute_tau_bound(eps0: float, L: float, M: float, T: float, C_tilde: float | None = None,
                      C_nu_p: float = 1.0, C_M="sqrt_plus_linear", rtol: float = 1e-6) -> float:
    """Largest ``tau <= T`` with ``growth_factor(tau, M) eps0 <= L`` and
    ``C_tilde C_nu_p C_M(tau) eps0 < 1``.

    The second condition is skipped when ``C_tilde`` is None.  Both are
    monotone in ``tau``, so the admissible set is an interval found by
    bisection to relative tolerance ``rtol``.
    """
    if eps0 < 0 or L <= 0 or M < 0 or T <= 0:
        raise ValueError("need eps0 >= 0, L > 0, M >= 0, T > 0")
    if C_tilde is not None and M < C_tilde * L:
        raise ValueError(f"M = {M} must be at least C_tilde * L = {C_tilde * L}")
    if eps0 > L:
        raise NoAdmissibleTau(f"eps0 = {eps0} exceeds L = {L}; no horizon is admissible")
    if eps0 == 0:
        return float(T)
    cm = cost_model(C_M, M)

    def ok(tau):
        if growth_factor(tau, M) * eps0 > L:
            return False
        return C_tilde is None or C_tilde * C_nu_p * cm(tau) * eps0 < 1.0

    if ok(T):
        return float(T)
    lo, hi = 0.0, float(T)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class ContractionBudget:
    """Radii and constants of the contraction argument; ``tau`` overrides the computed horizon."""

    L: float
    M: float
    C_tilde: float = 1.0
    C_nu_p: float = 1.0
    C_M: object = "sqrt_plus_linear"
    tau: float | None = None

    def __post_init__(self):
        if self.L <= 0 or self.M <= 0:
            raise ValueError("L and M must be positive")
        if self.M < self.C_tilde * self.L:
            raise ValueError(f"M = {self.M} must be at least C_tilde * L = {self.C_tilde * self.L}")

    def horizon(self, eps0: float, T: float) -> float:
        if self.tau is not None:
            if not 0 < self.tau <= T:
                raise ValueError("tau override must lie in (0, T]")
            return float(self.tau)
        return compute_tau_bound(eps0, self.L, self.M, T, self.C_tilde, self.C_nu_p, self.C_M)


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass
class SolverConfig:
    """Discretization of one Picard run.  ``ds`` defaults to ``tau / 8``."""

    R: float = 3.0
    h: float = 0.5
    n_t: int = 3
    ds: float | None = None
    n_samples: int = 64
    bs_samples: int = 256
    seed: int = 0
    mode: str = "symmetric"
    quad: TimeQuadrature = field(default_factory=TimeQuadrature)
    tol: float = 1e-8
    max_iters: int = 6
    n_pairs: int = 1024
    slack: float = 0.25

    def __post_init__(self):
        check_mode(self.mode)
        if self.n_t < 2:
            raise ValueError("n_t must be >= 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class IterationReport:
    """Outcome of a Picard run.

    ``distances[k]`` is ``sup_t ||u_{k+1} - u_k||_{C^{1,alpha}}`` on the grid;
    ``noise_floors[k]`` is three times the standard error of ``|u_{k+1} - u_k|``
    at the node where it is largest, compared against that sup distance.
    """

    tau: float
    times: np.ndarray
    eps0: float
    velocities: list = field(default_factory=list)
    vorticities: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    sup_distances: list = field(default_factory=list)
    noise_floors: list = field(default_factory=list)
    nsbound: list = field(default_factory=list)
    converged: bool = False
    converged_at: int | None = None
    diverged: bool = False
    noise_floor_at: int | None = None

    @property
    def ratios(self) -> list:
        d = self.distances
        return [d[k + 1] / d[k] if d[k] > 0 else math.nan for k in range(len(d) - 1)]

    def contraction_run(self) -> int:
        """Number of consecutive ratios below 1 from the first, before the noise floor."""
        stop = len(self.ratios) if self.noise_floor_at is None else min(len(self.ratios), self.noise_floor_at)
        run = 0
        for r in self.ratios[:stop]:
            if r < 1:
                run += 1
            else:
                break
        return run

    @property
    def nsbound_ok(self) -> bool:
        return all(r["ok"] for r in self.nsbound)


def _norm_std_error(per: np.ndarray) -> float:
    """Delta-method standard error of ``|mean(per)|`` for per-sample vectors ``per``."""
    n = per.shape[0]
    if n < 2:
        return 0.0
    m = per.mean(axis=0)
    r = float(np.linalg.norm(m))
    if r == 0.0:
        return float(np.max(per.std(axis=0, ddof=1))) / math.sqrt(n)
    proj = per @ (m / r)
    return float(proj.std(ddof=1) / math.sqrt(n))


def _ns_grid(u, problem, times, nodes, R, h, ds, driver, n, mode, stream=0):
    """NS map on every node and time slice, as a zero-extended grid field."""
    m = int(round(2 * R / h)) + 1
    vals = []
    for t in times:
        if t == 0.0:
            vals.append(problem.xi0.value(0.0, nodes))
            continue
        grid = TimeGrid.from_step(float(t), ds)
        vals.append(ns_map(u, problem, float(t), nodes, grid, driver, n, mode, stream=stream).value)
    return GridField(R, h, times, np.stack(vals).reshape(len(times), m, m, m, 3), "zero")


def _bs_grid(xi: GridField, times, cfg: SolverConfig, driver, p):
    m = int(round(2 * cfg.R / cfg.h)) + 1
    samples = [_bs_slice(xi, float(t), cfg.R, cfg.h, cfg.quad, driver, cfg.bs_samples, p, 1) for t in times]
    mean = np.stack([s.mean(axis=0) for s in samples]).reshape(len(times), m, m, m, 3)
    return GridField(cfg.R, cfg.h, times, mean, "clamp"), samples


def _slice_norms(fld, t, problem, cfg, gradient=False) -> NormReport:
    return estimate_norms(fld, problem.alpha, problem.p, cfg.R, cfg.h, cfg.n_pairs, float(t),
                          cfg.seed, gradient=gradient)


def picard_iterate(problem: NSProblem, budget: ContractionBudget, cfg: SolverConfig,
                   log: Callable[[str], None] | None = None) -> IterationReport:
    """Iterate ``u -> BS(NS(u))`` from the heat flow of ``xi0`` on ``[0, tau]``.

    Every iteration reuses the same seed, so successive iterates differ only
    through the map itself and their distance contracts down to rounding;
    the noise floor records where that distance drops below the Monte Carlo
    resolution of a single iterate.
    """
    eps0 = problem.eps0 if problem.eps0 is not None else problem.data_size(cfg.R, cfg.h, cfg.n_pairs, cfg.seed)
    tau = budget.horizon(eps0, problem.T) if eps0 > 0 else (budget.tau or problem.T)
    times = np.linspace(0.0, tau, cfg.n_t)
    ds = cfg.ds if cfg.ds is not None else tau / 8
    nodes = _box_nodes(cfg.R, cfg.h)
    driver = BrownianDriver(cfg.seed)
    rep = IterationReport(tau, times, eps0)
    say = log or (lambda msg: None)

    xi = _ns_grid(ZeroField(), problem, times, nodes, cfg.R, cfg.h, ds, driver, cfg.n_samples, cfg.mode)
    u, u_samples = _bs_grid(xi, times, cfg, driver, problem.p)
    rep.vorticities.append(xi)
    rep.velocities.append(u)
    xi0_sup = _slice_norms(problem.xi0, 0.0, problem, cfg).sup_norm
    streak = 0
    for k in range(cfg.max_iters):
        u_norms = [_slice_norms(u, t, problem, cfg, gradient=True) for t in times]
        M = max(r.c1alpha for r in u_norms)
        Mg = max(r.gradient_opnorm for r in u_norms)
        xi = _ns_grid(u, problem, times, nodes, cfg.R, cfg.h, ds, driver, cfg.n_samples, cfg.mode)
        for t in times:
            nr = _slice_norms(xi, t, problem, cfg)
            lim = growth_factor(t, M) * eps0 * (1 + cfg.slack)
            qlim = math.exp(t * Mg) * xi0_sup * (1 + cfg.slack)
            rep.nsbound.append({"iteration": k + 1, "t": float(t), "norm": nr.combined, "bound": lim,
                                "sup": nr.sup_norm, "sup_bound": qlim,
                                "ok": nr.combined <= lim + 1e-12 and (problem.g is not None or nr.sup_norm <= qlim + 1e-12)})
        u_new, new_samples = _bs_grid(xi, times, cfg, driver, problem.p)
        diff = GridField(cfg.R, cfg.h, times, u_new.values - u.values, "clamp")
        dist = max(_slice_norms(diff, t, problem, cfg, gradient=True).c1alpha for t in times)
        mags = np.linalg.norm(diff.values, axis=-1).reshape(len(times), -1)
        j, node = np.unravel_index(int(np.argmax(mags)), mags.shape)
        sup = float(mags[j, node])
        # standard error of |u_{k+1} - u_k| at the node attaining the sup
        per = new_samples[j][:, node] - u_samples[j][:, node]
        se = _norm_std_error(per)
        rep.distances.append(dist)
        rep.sup_distances.append(sup)
        rep.noise_floors.append(3 * se)
        rep.vorticities.append(xi)
        rep.velocities.append(u_new)
        say(f"iteration {k + 1}: d = {dist:.6g}, sup = {sup:.6g}, noise floor = {3 * se:.3g}")
        if rep.noise_floor_at is None and sup > 0 and sup < 3 * se:
            rep.noise_floor_at = k
        u, u_samples = u_new, new_samples
        if dist < cfg.tol:
            rep.converged, rep.converged_at = True, k
            break
        if len(rep.distances) >= 2:
            streak = streak + 1 if rep.distances[-1] > rep.distances[-2] else 0
            if streak >= 3:
                rep.diverged = True
                break
    return rep
