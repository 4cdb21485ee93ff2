"""Experiment runners behind the CLI subcommands, and result emission.

Each runner takes a validated :class:`RunConfig` and returns an
:class:`Outcome`: result rows (one per checked quantity), free-text notes for
the summary and any grid fields to dump.  :func:`write_outputs` turns an
outcome into ``summary.txt``, ``results.csv`` and the field files.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import oracles
from .config import RunConfig
from .feynman_kac import (INITIAL, ParabolicSystemSpec, augment_inhomogeneous, solve_final_value,
                          solve_final_value_homogeneous, solve_initial_value,
                          solve_initial_value_backward)
from .fields import (GaussianBump, GaussianVortexBlob, GridField, LambOseenSlice, VectorField,
                     analytic_field, estimate_norms)
from .kernel import (brownian_paths, deformation_violations, evolve_deformation,
                     flow_jacobian_determinant, girsanov_weights, paired_separation,
                     simulate_lagrangian_paths)
from .ns_solver import (ContractionBudget, NSProblem, SolverConfig, compute_tau_bound, cost_model,
                        growth_factor, ns_map, picard_iterate)
from .potential import (DensityField, TimeQuadrature, biot_savart_stencil, newtonian_potential,
                        potential_gradient, potential_hessian)
from .rng import BrownianDriver, TimeGrid

log = logging.getLogger("probns")

CSV_COLUMNS = ("experiment", "quantity", "value", "std_error", "oracle_value", "tolerance", "pass")


@dataclass
class Row:
    """One checked quantity.  ``passed`` is None for purely informative rows."""

    experiment: str
    quantity: str
    value: float
    std_error: float
    oracle_value: float = math.nan
    tolerance: float = math.nan
    passed: bool | None = None

    def cells(self) -> list[str]:
        verdict = "info" if self.passed is None else str(bool(self.passed)).lower()
        return [self.experiment, self.quantity, repr(float(self.value)), repr(float(self.std_error)),
                "" if math.isnan(self.oracle_value) else repr(float(self.oracle_value)),
                "" if math.isnan(self.tolerance) else repr(float(self.tolerance)), verdict]


@dataclass
class Outcome:
    experiment: str
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def check(self, quantity, value, std_error, oracle, tolerance) -> Row:
        """Row passing when ``|value - oracle| <= tolerance``."""
        value, oracle = float(value), float(oracle)
        row = Row(self.experiment, quantity, value, float(std_error), oracle, float(tolerance),
                  bool(abs(value - oracle) <= tolerance))
        self.rows.append(row)
        return row

    def info(self, quantity, value, std_error=0.0) -> Row:
        row = Row(self.experiment, quantity, float(value), float(std_error))
        self.rows.append(row)
        return row

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if r.passed is not None)


# ---------------------------------------------------------------------------
# helpers


def _driver(cfg: RunConfig) -> BrownianDriver:
    return BrownianDriver(cfg.seed, workers=cfg.get("solver", "workers", 1))


def _quad(cfg: RunConfig) -> TimeQuadrature:
    q = cfg.get("solver", "quadrature", {})
    return TimeQuadrature(q.get("s_min", 1e-4), q.get("s_max", 1e4), q.get("n_nodes", 32))


def _points(cfg: RunConfig, default) -> np.ndarray:
    return np.asarray(cfg.get("solver", "points", default), dtype=float).reshape(-1, 3)


def _params(spec: dict) -> dict:
    return {k: v for k, v in spec.items() if k not in ("name", "part")}


def _field(cfg: RunConfig, key: str, default: dict | None) -> VectorField | None:
    """Analytic field from ``problem.<key>``; ``part: vorticity`` takes its curl."""
    spec = cfg.get("problem", key, default)
    if spec is None:
        return None
    if spec["name"] in ("ball_indicator", "cosine"):
        raise cfg.error(f"'{spec['name']}' is not a vector field", f"problem.{key}")
    try:
        fld = analytic_field(spec["name"], **_params(spec))
    except (TypeError, ValueError) as e:
        raise cfg.error(f"bad parameters for {spec['name']!r}: {e}", f"problem.{key}") from None
    return fld.vorticity() if spec.get("part") == "vorticity" else fld


def _fmt(v) -> str:
    return ",".join(f"{c:g}" for c in np.atleast_1d(v))


def _within(est_value, est_se, oracle, extra):
    return abs(est_value - oracle) <= 3 * est_se + extra


# ---------------------------------------------------------------------------
# heat-check


def heat_check(cfg: RunConfig) -> Outcome:
    """Feynman-Kac heat solve against the closed form; tolerance ``3 se + 0.5 ds``."""
    out = Outcome(cfg.experiment)
    nu = cfg.get("problem", "nu", 0.5)
    T, t = cfg.get("problem", "T", 0.5), cfg.get("problem", "t", 0.0)
    if not t < T:
        raise cfg.error("need problem.t < problem.T", "problem.t")
    ds = cfg.get("solver", "ds", 1e-3)
    n = cfg.get("solver", "n_samples", 100_000)
    grid = TimeGrid.from_step(T - t, ds)
    driver = _driver(cfg)
    init = cfg.get("problem", "initial", {"name": "cosine", "k": 2.0})
    sigma = math.sqrt(2 * nu)
    bias = 0.5 * grid.ds

    if init["name"] == "cosine":
        k = float(init.get("k", 2.0))
        spec = ParabolicSystemSpec(1, 1, lambda x: np.cos(k * x), sigma=sigma, T=T, phi_bound=1.0)
        for x in cfg.get("solver", "xs", [0.0, 0.3, 1.0]):
            est = solve_final_value_homogeneous(spec, t, [x], grid, driver, n)
            ref, err = oracles.cos_heat_1d(x, k, sigma**2 * (T - t))
            out.check(f"v(x={x:g})", est.value[0], est.std_error[0], ref,
                      3 * est.std_error[0] + bias + err)
    elif init["name"] == "gaussian_bump":
        bump = _field(cfg, "initial", None)
        if not isinstance(bump, GaussianBump):
            raise cfg.error("heat-check takes a gaussian_bump initial field", "problem.initial")
        spec = ParabolicSystemSpec(3, bump.components, lambda x: bump.value(0.0, x), sigma=sigma, T=T,
                                   phi_bound=bump.sup_bound)
        for x in _points(cfg, [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.3, -0.4, 1.0]]):
            est = solve_final_value_homogeneous(spec, t, x, grid, driver, n)
            ref, err = oracles.heat_convolution(x - bump.center, T - t, nu, bump.amplitude, bump.width)
            for c in range(bump.components):
                out.check(f"v_{c}(x={_fmt(x)})", est.value[c], est.std_error[c], ref[c],
                          3 * est.std_error[c] + bias + err)
    else:
        raise cfg.error("heat-check takes a 'cosine' or 'gaussian_bump' initial field", "problem.initial")
    out.notes.append(f"grid: T - t = {T - t:g}, ds = {grid.ds:g}, N = {n}; tolerance 3 se + 0.5 ds")
    return out


# ---------------------------------------------------------------------------
# poisson-check and gradient-check


def _density(cfg: RunConfig):
    spec = cfg.get("problem", "density", {"name": "ball_indicator", "radius": 1.0})
    name = spec["name"]
    if name == "ball_indicator":
        r = float(spec.get("radius", 1.0))
        return (DensityField.ball_indicator(r), lambda x: oracles.ball_potential(x, r)[0],
                lambda x: oracles.ball_potential_gradient(x, r)[0])
    if name == "gaussian_bump":
        amp = np.atleast_1d(np.asarray(spec.get("amplitude", 1.0), dtype=float))
        if amp.size != 1:
            raise cfg.error("the density must be scalar", "problem.density")
        w = float(spec.get("width", 1.0))
        c = np.asarray(spec.get("center", (0.0, 0.0, 0.0)), dtype=float)
        f = DensityField.gaussian(amp[0], w, c)
        return (f, lambda x: oracles.gaussian_potential(x - c, amp[0], w)[0][0],
                lambda x: oracles.gaussian_potential(x - c, amp[0], w)[0][1])
    raise cfg.error("density must be 'ball_indicator' or 'gaussian_bump'", "problem.density")


def poisson_check(cfg: RunConfig) -> Outcome:
    """Newtonian potential at probe points; tolerance ``3 se + quadrature tolerance``."""
    out = Outcome(cfg.experiment)
    f, value, _ = _density(cfg)
    quad, tol = _quad(cfg), cfg.get("solver", "tolerance", 1e-3)
    n = cfg.get("solver", "n_samples", 100_000)
    pts = _points(cfg, [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    est = newtonian_potential(f, pts, quad, _driver(cfg), n, tol)
    for i, x in enumerate(pts):
        out.check(f"Nf(x={_fmt(x)})", est.value[i], est.std_error[i], value(x), 3 * est.std_error[i] + tol)
    out.notes.append(f"quadrature: {quad.n_nodes} nodes on [{quad.s_min:g}, {quad.s_max:g}], "
                     f"truncation bound {est.diagnostics['truncation_bound']:.3g}, N = {n}")
    return out


def gradient_check(cfg: RunConfig) -> Outcome:
    """Potential gradient at probe points; for a Hoelder density also ``-trace Hessian = f``."""
    out = Outcome(cfg.experiment)
    f, _, grad = _density(cfg)
    quad, tol = _quad(cfg), cfg.get("solver", "tolerance", 1e-3)
    n = cfg.get("solver", "n_samples", 100_000)
    driver = _driver(cfg)
    pts = _points(cfg, [[2.0, 0.0, 0.0]])
    est = potential_gradient(f, pts, quad, driver, n, tol)
    for i, x in enumerate(pts):
        ref = grad(x)
        for j in range(3):
            out.check(f"d{j + 1}Nf(x={_fmt(x)})", est.value[i, j], est.std_error[i, j], ref[j],
                      3 * est.std_error[i, j] + tol)
    if f.alpha is not None:
        hes = potential_hessian(f, pts, quad, driver, n, tol)
        tv, tse = hes.diagnostics["trace"]
        for i, x in enumerate(pts):
            out.check(f"-trace_hessian(x={_fmt(x)})", -tv[i], tse[i], float(f(x)[0]), 3 * tse[i] + tol)
    out.notes.append(f"quadrature: {quad.n_nodes} nodes on [{quad.s_min:g}, {quad.s_max:g}], N = {n}")
    return out


# ---------------------------------------------------------------------------
# biot-savart-check

_BS_POINTS = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.5, 0.3], [-0.4, 0.3, 0.0], [0.3, -0.3, 0.5]]


def biot_savart_check(cfg: RunConfig) -> Outcome:
    """Curl and divergence of the estimated velocity by shared-sample stencils, and the kernel oracle.

    Stencil tolerance ``3 se + h^2``; velocity tolerance ``3 se`` plus the
    truncation bound and the oracle's own error.
    """
    out = Outcome(cfg.experiment)
    vort = _field(cfg, "vorticity", {"name": "gaussian_vortex_blob", "scale": 1.0, "part": "vorticity"})
    R, hq = cfg.get("solver", "R", 6.0), cfg.get("solver", "h", 0.1)
    lip = estimate_norms(vort, 0.5, 1.0, R, hq, 256, gradient=True).gradient_opnorm
    xi = DensityField.from_field(vort, R, hq, lipschitz=lip)
    quad, tol = _quad(cfg), cfg.get("solver", "tolerance", 1e-3)
    h = cfg.get("solver", "stencil_h", 0.05)
    n = cfg.get("solver", "n_samples", 50_000)
    driver = _driver(cfg)
    trunc = quad.first_order_tail(xi) + quad.first_order_head(xi)
    for x in _points(cfg, _BS_POINTS):
        log.info("biot-savart stencil at %s", _fmt(x))
        sc = biot_savart_stencil(xi, x, h, quad, driver, n, tol)
        target = vort.value(0.0, x)
        for c in range(3):
            out.check(f"curl_{c + 1}(x={_fmt(x)})", sc.curl.value[c], sc.curl.std_error[c], target[c],
                      3 * sc.curl.std_error[c] + h * h)
        out.check(f"div(x={_fmt(x)})", sc.divergence.value, sc.divergence.std_error, 0.0,
                  3 * sc.divergence.std_error + h * h)
        ref, err = oracles.kernel_biot_savart(vort, x)
        for c in range(3):
            out.check(f"u_{c + 1}(x={_fmt(x)})", sc.velocity.value[c], sc.velocity.std_error[c], ref[c],
                      3 * sc.velocity.std_error[c] + trunc + err)
    out.notes.append(f"stencil h = {h:g}, N = {n}, velocity truncation bound {trunc:.3g}")
    return out


# ---------------------------------------------------------------------------
# fk-system-check and fk-reversal-check


def _coupled_spec(T: float, direction: str = "final-condition") -> ParabolicSystemSpec:
    """A two-component system with variable coupling, drift and source; everything bounded."""

    def b(t, x):
        return np.stack([0.3 * np.sin(x[..., 1]), -0.2 * np.cos(x[..., 0]) + 0.1 * t,
                         0.1 * np.ones_like(x[..., 0])], axis=-1)

    def D(t, x):
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = -0.5
        out[..., 0, 1] = np.cos(x[..., 0]) * (1 + 0.5 * np.sin(t))
        out[..., 1, 0] = 0.3 * np.sin(x[..., 1])
        out[..., 1, 1] = -0.2 + 0.1 * np.cos(x[..., 2])
        return out

    def f(t, x):
        r2 = np.sum(x * x, axis=-1)
        return np.stack([np.exp(-r2) * np.cos(t), 0.5 * np.sin(x[..., 2] + t)], axis=-1)

    def phi(x):
        return np.stack([np.exp(-0.5 * np.sum(x * x, axis=-1)), np.cos(x[..., 0])], axis=-1)

    return ParabolicSystemSpec(3, 2, phi, b=b, sigma=0.8, D=D, f=f, direction=direction, T=T,
                               D_bound=2.5, f_bound=1.2, phi_bound=math.sqrt(2))


def fk_system_check(cfg: RunConfig) -> Outcome:
    """Nilpotent frozen-path identity and the augmentation equivalence, both to rounding."""
    out = Outcome(cfg.experiment)
    T = cfg.get("problem", "T", 1.0)
    ds = cfg.get("solver", "ds", 0.01)
    n = cfg.get("solver", "n_samples", 4096)
    driver = _driver(cfg)
    grid = TimeGrid.from_step(T, ds)
    pts = _points(cfg, [[0.0, 0.0, 0.0], [0.4, -0.2, 0.7]])

    def phi(x):
        return np.stack([np.sin(x[..., 0]), np.cos(x[..., 0]) + x[..., 1]], axis=-1)

    nil = ParabolicSystemSpec(3, 2, phi, sigma=0.0, D=np.array([[0.0, 1.0], [0.0, 0.0]]), T=T)
    for x in pts:
        est = solve_final_value_homogeneous(nil, 0.0, x, grid, driver, 16)
        p = phi(x)
        ref = p + T * np.array([p[1], 0.0])
        for c in range(2):
            out.check(f"nilpotent_v{c + 1}(x={_fmt(x)})", est.value[c], est.std_error[c], ref[c], 1e-12)

    spec = _coupled_spec(T)
    aug = augment_inhomogeneous(spec)
    for x in pts:
        direct = solve_final_value(spec, 0.0, x, grid, driver, n)
        via = solve_final_value_homogeneous(aug, 0.0, x, grid, driver, n)
        for c in range(2):
            out.check(f"augmented_v{c + 1}(x={_fmt(x)})", via.value[c], via.std_error[c],
                      direct.value[c], 1e-12)
        out.check(f"augmented_unit(x={_fmt(x)})", via.value[2], via.std_error[2], 1.0, 0.0)
    out.notes.append(f"T = {T:g}, ds = {grid.ds:g}, N = {n}; augmentation compared at the same seed")
    return out


def fk_reversal_check(cfg: RunConfig) -> Outcome:
    """Forward and reversed-path initial-value solvers must agree bit for bit."""
    out = Outcome(cfg.experiment)
    t = cfg.get("problem", "T", 1.0)
    ds = cfg.get("solver", "ds", 0.01)
    n = cfg.get("solver", "n_samples", 4096)
    driver = _driver(cfg)
    grid = TimeGrid.from_step(t, ds)
    spec = _coupled_spec(t, INITIAL)
    for x in _points(cfg, [[0.0, 0.0, 0.0], [0.4, -0.2, 0.7]]):
        fwd = solve_initial_value(spec, t, x, grid, driver, n)
        bwd = solve_initial_value_backward(spec, t, x, grid, driver, n)
        gap = float(max(np.max(np.abs(fwd.value - bwd.value)), np.max(np.abs(fwd.std_error - bwd.std_error))))
        out.check(f"max|forward-backward|(x={_fmt(x)})", gap, 0.0, 0.0, 0.0)
        for c in range(2):
            out.info(f"v{c + 1}(x={_fmt(x)})", fwd.value[c], fwd.std_error[c])
    out.notes.append(f"t = {t:g}, ds = {grid.ds:g}, N = {n}")
    return out


# ---------------------------------------------------------------------------
# girsanov-check


def girsanov_check(cfg: RunConfig) -> Outcome:
    """Moments of the Girsanov density for a constant drift, and weighted vs direct NS map."""
    out = Outcome(cfg.experiment)
    nu = cfg.get("problem", "nu", 0.5)
    t = cfg.get("problem", "T", 1.0)
    c = np.asarray(cfg.get("problem", "drift", [0.3, -0.2, 0.1]), dtype=float)
    if c.shape != (3,):
        raise cfg.error("problem.drift must have three components", "problem.drift")
    ds = cfg.get("solver", "ds", 0.05)
    n = cfg.get("solver", "n_samples", 100_000)
    driver = _driver(cfg)
    grid = TimeGrid.from_step(t, ds)

    ens = girsanov_weights(analytic_field("constant", c=c), brownian_paths(np.zeros(3), t, nu, grid, driver, n))
    Z = ens.Z[:, -1]
    m1, s1 = Z.mean(), Z.std(ddof=1) / math.sqrt(n)
    out.check("E[Z_t]", m1, s1, 1.0, 3 * s1)
    m2, s2 = (Z * Z).mean(), (Z * Z).std(ddof=1) / math.sqrt(n)
    out.check("E[Z_t^2]", m2, s2, math.exp(float(c @ c) * t / (2 * nu)), 3 * s2)
    del ens

    u = _field(cfg, "velocity", {"name": "solenoidal_shear", "gamma": 0.5})
    xi0 = _field(cfg, "vorticity", {"name": "gaussian_vortex_blob", "scale": 0.7, "part": "vorticity"})
    problem = NSProblem(nu, cfg.get("problem", "alpha", 0.5), cfg.get("problem", "p", 1.0), t, xi0)
    m = min(n, cfg.get("solver", "n_samples", 20_000))
    pts = _points(cfg, [[0.0, 0.0, 0.0], [0.3, -0.2, 0.1]])
    a = ns_map(u, problem, t, pts, grid, driver, m, cfg.get("solver", "mode", "symmetric"), "direct")
    b = ns_map(u, problem, t, pts, grid, driver, m, cfg.get("solver", "mode", "symmetric"), "girsanov")
    for i, x in enumerate(pts):
        for k in range(3):
            se = math.hypot(a.std_error[i, k], b.std_error[i, k])
            out.check(f"ns_map_girsanov-direct_{k + 1}(x={_fmt(x)})", b.value[i, k] - a.value[i, k], se,
                      0.0, 3 * se)
    out.notes.append(f"drift c = {_fmt(c)}, nu = {nu:g}, t = {t:g}, ds = {grid.ds:g}, N = {n}")
    return out


# ---------------------------------------------------------------------------
# tau-bound


def _tau_oracle(eps0, L, M, T, C_tilde, C_nu_p, C_M) -> float:
    """Independent root finding on the two scalar conditions."""
    if eps0 == 0:
        return T
    target = math.log(L / eps0)
    g = lambda tau: 3 * tau * M + math.log1p(tau * M) - target  # noqa: E731
    t1 = T if g(T) <= 0 else brentq(g, 0.0, T, xtol=1e-14)
    if C_tilde is None:
        return t1
    cm = cost_model(C_M, M)
    h = lambda tau: C_tilde * C_nu_p * cm(tau) * eps0 - 1.0  # noqa: E731
    t2 = T if h(T) < 0 else brentq(h, 0.0, T, xtol=1e-14)
    return min(t1, t2)


def tau_bound(cfg: RunConfig) -> Outcome:
    """Admissible horizon against an independent root finder; monotonicity in ``M`` and ``eps0``."""
    out = Outcome(cfg.experiment)
    B = cfg.budget
    eps0, L, M = cfg.need("budget", "eps0"), cfg.need("budget", "L"), cfg.need("budget", "M")
    T = cfg.get("problem", "T", 1.0)
    Ct, Cnp, CM = B.get("C_tilde"), B.get("C_nu_p", 1.0), B.get("C_M", "sqrt_plus_linear")
    rtol = 1e-9

    def tau(e, m):
        return compute_tau_bound(e, L, m, T, Ct, Cnp, CM, rtol=rtol)

    t0 = tau(eps0, M)
    out.check("tau", t0, rtol * t0, _tau_oracle(eps0, L, M, T, Ct, Cnp, CM), 1e-4)
    out.notes.append(f"growth factor at tau: {growth_factor(t0, M):.6g} (L / eps0 = {L / eps0:.6g})")

    for key, values, fn in (("M", B.get("M_sweep", [M, 2 * M, 4 * M, 8 * M]), lambda v: tau(eps0, v)),
                            ("eps0", B.get("eps0_sweep", [eps0 / 4, eps0 / 2, eps0]), lambda v: tau(v, M))):
        taus = [fn(v) for v in values]
        for v, tv in zip(values, taus):
            out.info(f"tau({key}={v:g})", tv, rtol * tv)
        order = np.argsort(values)
        seq = [taus[i] for i in order]
        # strictly decreasing wherever the horizon is not capped at T
        bad = sum(1 for a, b in zip(seq, seq[1:]) if b > a or (b == a and a < T))
        out.check(f"monotonicity_violations_in_{key}", bad, 0.0, 0.0, 0.0)
    return out


# ---------------------------------------------------------------------------
# ns-solve


def _solver_config(cfg: RunConfig) -> SolverConfig:
    S = cfg.solver
    return SolverConfig(
        R=S.get("R", 3.0), h=S.get("h", 0.5), n_t=S.get("n_t", 3), ds=S.get("ds"),
        n_samples=S.get("n_samples", 64), bs_samples=S.get("bs_samples", 256), seed=cfg.seed,
        mode=S.get("mode", "symmetric"), quad=_quad(cfg), tol=S.get("tolerance", 0.0),
        max_iters=S.get("max_iters", 5), n_pairs=S.get("n_pairs", 1024), slack=S.get("slack", 0.25))


def _budget(cfg: RunConfig) -> ContractionBudget:
    B = cfg.budget
    try:
        return ContractionBudget(cfg.need("budget", "L"), cfg.need("budget", "M"), B.get("C_tilde", 1.0),
                                 B.get("C_nu_p", 1.0), B.get("C_M", "sqrt_plus_linear"), B.get("tau"))
    except ValueError as e:
        raise cfg.error(str(e), "budget") from None


def _path_diagnostics(out: Outcome, u: VectorField, nu, t, grid, driver, n, mode):
    """Deformation growth, paired separation and flow volume along Lagrangian paths of ``u``."""
    x = np.zeros(3)
    ens = simulate_lagrangian_paths(u, x, t, nu, grid, driver, n, mode)
    M = u.grad_bound if u.grad_bound is not None else None
    evolve_deformation(ens, u, mode, M, check=False)
    out.check("deformation_bound_violations", deformation_violations(ens, ens.M), 0.0, 0.0, 0.0)
    sep = paired_separation(u, x, x + np.array([1e-3, 0.0, 0.0]), t, nu, grid, driver, n, ens.M)
    out.check("paired_separation_violations", sep["violations"], 0.0, 0.0, 0.0)
    det = flow_jacobian_determinant(u, ens)
    worst = float(np.max(np.abs(det - 1.0)))
    out.check("max|det(flow Jacobian)-1|", worst, 0.0, 0.0, 5 * grid.ds)


def ns_solve(cfg: RunConfig) -> Outcome:
    task = cfg.get("solver", "task", "picard")
    return _ns_transport(cfg) if task == "transport" else _ns_picard(cfg)


def _ns_transport(cfg: RunConfig) -> Outcome:
    """NS map under a prescribed velocity; against the analytic vorticity when one is known.

    Tolerance ``3 se + ds`` (the first-order bias term with unit constant).
    """
    out = Outcome(cfg.experiment)
    u = _field(cfg, "velocity", {"name": "lamb_oseen_slice", "circulation": 1.0, "nu": 0.1, "t0": 1.0})
    nu = cfg.get("problem", "nu", u.nu if isinstance(u, LambOseenSlice) else 0.1)
    if isinstance(u, LambOseenSlice) and not math.isclose(nu, u.nu):
        raise cfg.error("problem.nu must match the Lamb-Oseen viscosity", "problem.nu")
    xi0 = _field(cfg, "vorticity", None) or u.vorticity()
    t = cfg.get("problem", "T", 0.2)
    ds = cfg.get("solver", "ds", 1e-3)
    n = cfg.get("solver", "n_samples", 100_000)
    mode = cfg.get("solver", "mode", "symmetric")
    method = cfg.get("solver", "method", "direct")
    driver = _driver(cfg)
    grid = TimeGrid.from_step(t, ds)
    problem = NSProblem(nu, cfg.get("problem", "alpha", 0.5), cfg.get("problem", "p", 1.0), t, xi0)
    pts = _points(cfg, [[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.0, 0.5, 0.2], [-0.6, 0.4, 0.0], [0.8, -0.8, 1.0]])
    est = ns_map(u, problem, t, pts, grid, driver, n, mode, method)
    exact = cfg.get("problem", "vorticity") is None and isinstance(u, LambOseenSlice)
    for i, x in enumerate(pts):
        for k in range(3):
            name = f"xi_{k + 1}(t={t:g},x={_fmt(x)})"
            if exact:
                ref = u.curl(t, x)[k]
                out.check(name, est.value[i, k], est.std_error[i, k], ref, 3 * est.std_error[i, k] + grid.ds)
            else:
                out.info(name, est.value[i, k], est.std_error[i, k])
    _path_diagnostics(out, u, nu, t, grid, driver, min(n, 10_000), mode)
    out.notes.append(f"t = {t:g}, ds = {grid.ds:g}, N = {n}, mode = {mode}, method = {method}")
    return out


def _ns_picard(cfg: RunConfig) -> Outcome:
    out = Outcome(cfg.experiment)
    xi0 = _field(cfg, "vorticity", {"name": "gaussian_vortex_blob", "scale": 0.7, "amplitude": 0.03,
                                    "part": "vorticity"})
    g = _field(cfg, "forcing", None)
    problem = NSProblem(cfg.get("problem", "nu", 0.5), cfg.get("problem", "alpha", 0.5),
                        cfg.get("problem", "p", 1.0), cfg.get("problem", "T", 1.0), xi0, g,
                        cfg.get("budget", "eps0"))
    budget = _budget(cfg)
    sc = _solver_config(cfg)
    rep = picard_iterate(problem, budget, sc, log=log.info)
    out.info("eps0", rep.eps0)
    out.info("tau", rep.tau)
    if budget.tau is not None:
        try:
            computed = compute_tau_bound(rep.eps0, budget.L, budget.M, problem.T, budget.C_tilde,
                                         budget.C_nu_p, budget.C_M)
            out.notes.append(f"computed horizon {computed:.6g}; override tau = {budget.tau:g}")
        except ValueError as e:
            out.notes.append(f"computed horizon unavailable: {e}")
    for k, (d, s, fl) in enumerate(zip(rep.distances, rep.sup_distances, rep.noise_floors)):
        out.info(f"d_{k + 1}", d, fl / 3)
        out.info(f"sup_distance_{k + 1}", s, fl / 3)
    for k, r in enumerate(rep.ratios):
        out.info(f"ratio_{k + 2}/{k + 1}", r)
    run = rep.contraction_run()
    out.check("contraction_run", run, 0.0, max(run, 3), max(run, 3) - 3)
    out.check("nsbound_violations", sum(not r["ok"] for r in rep.nsbound), 0.0, 0.0, 0.0)
    for r in rep.nsbound:
        out.notes.append(f"iteration {r['iteration']}, t = {r['t']:.4g}: norm {r['norm']:.4g} <= "
                         f"{r['bound']:.4g}, sup {r['sup']:.4g} <= {r['sup_bound']:.4g}: {r['ok']}")
    out.notes.append("noise floor reached at iteration "
                     f"{'never' if rep.noise_floor_at is None else rep.noise_floor_at + 1}")
    for t in rep.times:
        nr = estimate_norms(rep.velocities[-1], problem.alpha, problem.p, sc.R, sc.h, sc.n_pairs, float(t),
                            sc.seed, gradient=True)
        out.notes.append(f"final velocity norms at t = {t:.4g}: sup {nr.sup_norm:.4g}, "
                         f"[.]_alpha {nr.hoelder_seminorm:.4g}, L^p {nr.lp_norm:.4g}"
                         f"{'' if nr.lp_trusted else ' (untrusted)'}, C^(1,alpha) {nr.c1alpha:.4g}")
    out.fields["velocity"] = rep.velocities[-1]
    out.fields["vorticity"] = rep.vorticities[-1]
    return out


# ---------------------------------------------------------------------------
# convergence-study


def emit_convergence_study(sweep: dict, seed: int = 0, workers: int = 1) -> list[dict]:
    """Errors against the exact mean for ``dX = -theta X ds + sigma dW``, ``phi = A cos(k x)``.

    One table row per ``(ds, n_samples)`` pair: the step sweep runs at
    ``n_fixed`` samples, the sample sweep at ``ds_fixed``.
    """
    theta, sigma = sweep.get("theta", 2.0), sweep.get("sigma", 1.0)
    k, x0, T, A = sweep.get("k", 3.0), sweep.get("x", 0.5), sweep.get("T", 1.0), sweep.get("amplitude", 1.0)
    spec = ParabolicSystemSpec(1, 1, lambda x: A * np.cos(k * x), b=lambda t, x: -theta * x, sigma=sigma,
                               T=T, phi_bound=abs(A))
    exact = A * oracles.ou_cos_mean(x0, theta, sigma, k, T)[0]
    driver = BrownianDriver(seed, workers=workers)
    pairs = [(ds, sweep.get("n_fixed", 1 << 20)) for ds in sweep.get("ds", [0.2, 0.1, 0.05])]
    pairs += [(sweep.get("ds_fixed", 0.05), n) for n in sweep.get("n_samples", [1 << 14, 1 << 16])]
    table = []
    for i, (ds, n) in enumerate(pairs):
        grid = TimeGrid.from_step(T, ds)
        est = solve_final_value_homogeneous(spec, 0.0, [x0], grid, driver, n)
        table.append({"sweep": "ds" if i < len(sweep.get("ds", [0.2, 0.1, 0.05])) else "n",
                      "ds": grid.ds, "n_samples": n, "value": float(est.value[0]),
                      "std_error": float(est.std_error[0]), "oracle": exact,
                      "error": float(est.value[0]) - exact})
    return table


def _slope(x, y) -> float:
    if len(x) < 2 or any(v <= 0 for v in y):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def convergence_study(cfg: RunConfig) -> Outcome:
    """Error ratios under halved ``ds`` (2 within 30%) and std-error ratios under 4x ``N`` (2 within 20%)."""
    out = Outcome(cfg.experiment)
    table = emit_convergence_study(cfg.sweep, cfg.seed, cfg.get("solver", "workers", 1))
    out.tables["convergence"] = table
    for r in table:
        out.info(f"error(ds={r['ds']:g},N={r['n_samples']})", r["error"], r["std_error"])
    steps = [r for r in table if r["sweep"] == "ds"]
    sizes = [r for r in table if r["sweep"] == "n"]
    zero = cfg.sweep.get("amplitude", 1.0) == 0.0
    if zero:
        for r in table:
            out.check(f"zero_problem_error(ds={r['ds']:g},N={r['n_samples']})", r["error"], r["std_error"],
                      0.0, 1e-14)
        return out
    for a, b in zip(steps, steps[1:]):
        if math.isclose(a["ds"], 2 * b["ds"]):
            ratio = a["error"] / b["error"]
            se = abs(ratio) * math.hypot(a["std_error"] / a["error"], b["std_error"] / b["error"])
            out.check(f"error_ratio(ds={a['ds']:g}->{b['ds']:g})", ratio, se, 2.0, 0.6)
    for a, b in zip(sizes, sizes[1:]):
        if b["n_samples"] == 4 * a["n_samples"]:
            ratio = a["std_error"] / b["std_error"]
            out.check(f"std_error_ratio(N={a['n_samples']}->{b['n_samples']})", ratio,
                      ratio / math.sqrt(2 * a["n_samples"]), 2.0, 0.4)
    out.info("slope(error vs ds)", _slope([r["ds"] for r in steps], [abs(r["error"]) for r in steps]))
    out.info("slope(std_error vs N)", _slope([r["n_samples"] for r in sizes], [r["std_error"] for r in sizes]))
    return out


RUNNERS = {
    "heat-check": heat_check,
    "poisson-check": poisson_check,
    "gradient-check": gradient_check,
    "biot-savart-check": biot_savart_check,
    "fk-system-check": fk_system_check,
    "fk-reversal-check": fk_reversal_check,
    "girsanov-check": girsanov_check,
    "tau-bound": tau_bound,
    "ns-solve": ns_solve,
    "convergence-study": convergence_study,
}


def run(cfg: RunConfig) -> Outcome:
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------------------
# output


def write_outputs(outcome: Outcome, cfg: RunConfig, out_dir, error: str | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in outcome.rows:
            w.writerow(r.cells())
    for name, table in outcome.tables.items():
        if not table:
            continue
        with open(out_dir / f"{name}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0]), lineterminator="\n")
            w.writeheader()
            for row in table:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    for name, fld in outcome.fields.items():
        if isinstance(fld, GridField):
            fld.save(out_dir / f"{name}.bin")
            fld.save(out_dir / f"{name}.csv")
    lines = [f"experiment: {outcome.experiment}", f"config: {cfg.source}", f"seed: {cfg.seed}", ""]
    width = max((len(r.quantity) for r in outcome.rows), default=10)
    for r in outcome.rows:
        verdict = "info" if r.passed is None else ("PASS" if r.passed else "FAIL")
        ref = "" if math.isnan(r.oracle_value) else f"  oracle {r.oracle_value:.8g}  tol {r.tolerance:.3g}"
        lines.append(f"{verdict:4s}  {r.quantity:<{width}}  {r.value:.8g} +- {r.std_error:.3g}{ref}")
    if outcome.notes:
        lines.append("")
        lines.extend(outcome.notes)
    lines.append("")
    if error is not None:
        lines.append(f"runtime failure: {error}")
    else:
        n_fail = sum(1 for r in outcome.rows if r.passed is False)
        lines.append("all checks passed" if n_fail == 0 else f"{n_fail} check(s) failed")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
