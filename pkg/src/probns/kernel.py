"""Lagrangian paths, deformation matrices, Girsanov weights and flow Jacobians.

Paths solve ``dX = -u(t - s, X) ds + sqrt(2 nu) dW`` with ``X_0 = x`` and the
deformation matrices ``dU = U D_u(t - s, X_s) ds`` with ``U_0 = I``, both by
explicit Euler on a :class:`~probns.rng.TimeGrid`.  ``D_u`` is the symmetric
part of the velocity gradient (``mode="symmetric"``) or the full gradient
(``mode="full"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimate import FieldEvaluationError, InvariantViolation
from .fields import VectorField
from .rng import BrownianDriver, TimeGrid, sample_brownian_increments

MODES = ("symmetric", "full")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def deformation_tensor(J: np.ndarray, mode: str) -> np.ndarray:
    """``D_u`` from a gradient ``J[..., i, j] = d u_i / d x_j``."""
    if mode == "full":
        return J
    return 0.5 * (J + np.swapaxes(J, -1, -2))


def _first_bad(arr: np.ndarray, sample_axis: int, sample_offset: int) -> int:
    bad = ~np.isfinite(arr)
    idx = np.argwhere(bad)[0]
    return int(idx[sample_axis]) + sample_offset


def integrate_paths(
    x0: np.ndarray,
    grid: TimeGrid,
    dW: np.ndarray,
    drift: Callable[[int, np.ndarray], np.ndarray] | None,
    diffusion,
    coupling: Callable[[int, np.ndarray], np.ndarray] | None = None,
    l: int | None = None,
    on_step: Callable[[int, np.ndarray, np.ndarray | None], None] | None = None,
    sample_offset: int = 0,
):
    """Euler-Maruyama for ``X`` together with ``U <- U (I + ds * coupling)``.

    ``x0`` has shape ``(..., d)``; ``dW`` holds scaled increments of shape
    ``(N, n_steps, m)``.  The state has shape ``(..., N, d)`` so several start
    points can share the same noise.  ``drift(k, X)``, ``coupling(k, X)`` are
    evaluated at the left node ``s_k``; ``diffusion`` is a scalar or a
    callable returning ``(..., d, m)``.  ``on_step(k, X_k, U_k)`` is called
    for ``k = 0 .. n_steps`` before the update out of node ``k``.

    Returns the final ``(X, U)``; ``U`` is ``None`` without coupling.
    """
    x0 = np.asarray(x0, dtype=float)
    N = dW.shape[0]
    lead = x0.shape[:-1]
    X = np.array(np.broadcast_to(x0[..., None, :], lead + (N, x0.shape[-1])))
    sample_axis = len(lead)
    U = None
    if coupling is not None:
        U = np.array(np.broadcast_to(np.eye(l), lead + (N, l, l)))
    ds = grid.ds
    const_sigma = not callable(diffusion)
    for k in range(grid.n_steps + 1):
        if on_step is not None:
            on_step(k, X, U)
        if k == grid.n_steps:
            break
        if U is not None:
            D = coupling(k, X)
            if not np.all(np.isfinite(D)):
                raise FieldEvaluationError("deformation generator", _first_bad(D, sample_axis, sample_offset), k)
            U = U + ds * (U @ D)
        inc = dW[:, k]
        if const_sigma:
            noise = diffusion * inc
        else:
            S = diffusion(k, X)
            noise = np.einsum("...ij,...j->...i", S, np.broadcast_to(inc, X.shape[:-1] + inc.shape[-1:]))
        if drift is not None:
            b = drift(k, X)
            if not np.all(np.isfinite(b)):
                raise FieldEvaluationError("drift", _first_bad(b, sample_axis, sample_offset), k)
            X = X + ds * b + noise
        else:
            X = X + noise
        if not np.all(np.isfinite(X)):
            raise FieldEvaluationError("path position", _first_bad(X, sample_axis, sample_offset), k + 1)
    return X, U


@dataclass
class PathEnsemble:
    """Stored trajectories started from ``x`` over horizon ``t``.

    ``X`` has shape ``(N, n_steps + 1, 3)``, ``U`` ``(N, n_steps + 1, 3, 3)``
    and ``log_Z`` ``(N, n_steps + 1)`` once filled.  ``drifted`` is False
    for pure Brownian paths ``x + sqrt(2 nu) W``.
    """

    x: np.ndarray
    t: float
    nu: float
    grid: TimeGrid
    X: np.ndarray
    increments: np.ndarray
    seed: int
    drifted: bool = True
    mode: str = "symmetric"
    U: np.ndarray | None = None
    log_Z: np.ndarray | None = None
    M: float | None = None

    def __post_init__(self):
        if not (np.all(np.allclose(self.X[:, 0], self.x)) and self.X.shape[1] == self.grid.n_steps + 1):
            raise ValueError("ensemble paths must start at x and cover the grid")
        if self.U is not None and not np.array_equal(self.U[:, 0], np.broadcast_to(np.eye(3), self.U[:, 0].shape)):
            raise ValueError("U_0 must be the identity")
        if self.log_Z is not None and np.any(self.log_Z[:, 0] != 0.0):
            raise ValueError("Z_0 must be 1")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def Z(self) -> np.ndarray:
        if self.log_Z is None:
            raise ValueError("ensemble carries no Girsanov weights")
        return np.exp(self.log_Z)

    def times(self) -> np.ndarray:
        """Field evaluation times ``t - s_k``."""
        return np.array([self.t - self.grid.node(k) for k in range(self.grid.n_steps + 1)])


def _check_horizon(t, grid, nu):
    if not nu > 0:
        raise ValueError("nu must be positive")
    if not math.isclose(grid.horizon, t, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError(f"grid horizon {grid.horizon} does not match t = {t}")


def simulate_lagrangian_paths(u: VectorField, x, t: float, nu: float, grid: TimeGrid,
                              driver: BrownianDriver, n_samples: int, mode: str = "symmetric",
                              stream: int = 0) -> PathEnsemble:
    """Euler-Maruyama paths of ``dX = -u(t - s, X) ds + sqrt(2 nu) dW``, ``X_0 = x``."""
    check_mode(mode)
    _check_horizon(t, grid, nu)
    x = np.asarray(x, dtype=float).reshape(3)
    dW = sample_brownian_increments(driver.with_dim(3), grid, n_samples, stream)
    X = np.empty((n_samples, grid.n_steps + 1, 3))

    def record(k, Xk, _):
        X[:, k] = Xk

    integrate_paths(x, grid, dW, lambda k, Y: -u.value(t - grid.node(k), Y), math.sqrt(2 * nu),
                    on_step=record)
    return PathEnsemble(x, float(t), float(nu), grid, X, dW, driver.master_seed, True, mode)


def brownian_paths(x, t: float, nu: float, grid: TimeGrid, driver: BrownianDriver, n_samples: int,
                   stream: int = 0) -> PathEnsemble:
    """Pure Brownian paths ``x + sqrt(2 nu) W_s``, the reference measure for Girsanov weights."""
    _check_horizon(t, grid, nu)
    x = np.asarray(x, dtype=float).reshape(3)
    dW = sample_brownian_increments(driver.with_dim(3), grid, n_samples, stream)
    X = np.empty((n_samples, grid.n_steps + 1, 3))
    X[:, 0] = x
    X[:, 1:] = x + math.sqrt(2 * nu) * np.cumsum(dW, axis=1)
    return PathEnsemble(x, float(t), float(nu), grid, X, dW, driver.master_seed, False)


def default_slack(M: float) -> float:
    """Integrator slack constant ``c = M^2``."""
    return M * M


def deformation_bound(M: float, s, ds: float, c: float | None = None):
    """``exp(s M) (1 + c ds s)``, the discrete analogue of the growth bound on ``|U_s|``."""
    c = default_slack(M) if c is None else c
    return np.exp(np.asarray(s) * M) * (1.0 + c * ds * np.asarray(s))


def evolve_deformation(ensemble: PathEnsemble, u: VectorField, mode: str | None = None,
                       M: float | None = None, c: float | None = None,
                       check: bool = True) -> PathEnsemble:
    """Fill ``ensemble.U`` by ``U <- U (I + ds D_u(t - s_k, X_k))``.

    ``M`` bounds ``sup |D_u|``; it defaults to ``u.grad_bound`` and, failing
    that, to the largest ``|D_u|`` met along the paths.  The growth bound is
    asserted for every sample and step unless ``check`` is False.
    """
    mode = check_mode(mode or ensemble.mode)
    g = ensemble.grid
    N, n = ensemble.n_samples, g.n_steps
    U = np.empty((N, n + 1, 3, 3))
    U[:, 0] = np.eye(3)
    seen = 0.0
    for k in range(n):
        J = u.gradient(ensemble.t - g.node(k), ensemble.X[:, k])
        if not np.all(np.isfinite(J)):
            raise FieldEvaluationError("velocity gradient", _first_bad(J, 0, 0), k)
        D = deformation_tensor(J, mode)
        seen = max(seen, float(np.max(np.linalg.norm(D, ord=2, axis=(-2, -1)))))
        U[:, k + 1] = U[:, k] + g.ds * (U[:, k] @ D)
    if M is None:
        M = u.grad_bound if u.grad_bound is not None else seen
    ensemble.U, ensemble.mode, ensemble.M = U, mode, float(M)
    if check:
        v = deformation_violations(ensemble, M, c)
        if v:
            raise InvariantViolation(f"|U_s| exceeded exp(sM)(1 + c ds s) in {v} (sample, step) cells")
    return ensemble


def deformation_violations(ensemble: PathEnsemble, M: float, c: float | None = None) -> int:
    """Count of ``(sample, step)`` cells where ``|U_s|`` breaks the growth bound."""
    if ensemble.U is None:
        raise ValueError("deformation matrices not computed")
    norms = np.linalg.norm(ensemble.U, ord=2, axis=(-2, -1))
    bound = deformation_bound(M, ensemble.grid.nodes, ensemble.grid.ds, c)
    return int(np.count_nonzero(norms > bound * (1 + 1e-12)))


def girsanov_weights(u: VectorField, ensemble: PathEnsemble) -> PathEnsemble:
    """Log-weights turning pure Brownian paths into drifted Lagrangian paths.

    With ``beta_k = -u(t - s_k, Y_k) / sqrt(2 nu)`` the weights are
    ``log Z_{k+1} = log Z_k + beta_k . dW_k - |beta_k|^2 ds / 2``, so that
    ``E[Z_t F(Y)] = E[F(X)]`` for the Euler path ``X`` driven by the same
    scheme.  Weights stay in log space; only a non-finite log-weight is an
    error.
    """
    if ensemble.drifted:
        raise ValueError("Girsanov weights need pure Brownian paths")
    g, t = ensemble.grid, ensemble.t
    s2nu = math.sqrt(2 * ensemble.nu)
    logZ = np.zeros((ensemble.n_samples, g.n_steps + 1))
    for k in range(g.n_steps):
        beta = -u.value(t - g.node(k), ensemble.X[:, k]) / s2nu
        inc = np.einsum("ij,ij->i", beta, ensemble.increments[:, k]) - 0.5 * g.ds * np.einsum("ij,ij->i", beta, beta)
        logZ[:, k + 1] = logZ[:, k] + inc
        if not np.all(np.isfinite(logZ[:, k + 1])):
            raise FieldEvaluationError("Girsanov log-weight", _first_bad(logZ[:, k + 1], 0, 0), k + 1)
    ensemble.log_Z = logZ
    return ensemble


def log_girsanov_step(u_val: np.ndarray, inc: np.ndarray, nu: float, ds: float) -> np.ndarray:
    """One log-weight increment for velocities ``u_val`` and increments ``inc`` (last axis 3)."""
    beta = -u_val / math.sqrt(2 * nu)
    return np.sum(beta * inc, axis=-1) - 0.5 * ds * np.sum(beta * beta, axis=-1)


def flow_jacobian_determinant(u: VectorField, ensemble: PathEnsemble, sample: int | None = None):
    """``det J_t`` of the stochastic flow along stored paths.

    Integrates ``dJ = -grad u(t - s, X_s) J ds`` by explicit Euler.  Returns a
    scalar for one ``sample`` or an array over all samples.
    """
    g, t = ensemble.grid, ensemble.t
    X = ensemble.X if sample is None else ensemble.X[sample:sample + 1]
    J = np.broadcast_to(np.eye(3), (X.shape[0], 3, 3)).copy()
    for k in range(g.n_steps):
        G = u.gradient(t - g.node(k), X[:, k])
        if not np.all(np.isfinite(G)):
            raise FieldEvaluationError("velocity gradient", _first_bad(G, 0, 0 if sample is None else sample), k)
        J = J - g.ds * (G @ J)
    det = np.linalg.det(J)
    return float(det[0]) if sample is not None else det


def paired_separation(u: VectorField, x, y, t: float, nu: float, grid: TimeGrid,
                      driver: BrownianDriver, n_samples: int, grad_bound: float | None = None,
                      c: float | None = None) -> dict:
    """Drive paths from ``x`` and ``y`` with identical noise and test the two-point bound.

    ``|X^x_s - X^y_s| <= |x - y| exp(s L) (1 + c ds)`` with ``L`` a bound on
    ``sup |grad u|``.  Returns the violation count and the largest ratio of
    separation to bound.
    """
    L = grad_bound if grad_bound is not None else u.grad_bound
    if L is None:
        raise ValueError("a gradient bound is required")
    c = default_slack(L) if c is None else c
    ex = simulate_lagrangian_paths(u, x, t, nu, grid, driver, n_samples)
    ey = simulate_lagrangian_paths(u, y, t, nu, grid, driver, n_samples)
    sep = np.linalg.norm(ex.X - ey.X, axis=-1)
    d0 = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    bound = d0 * np.exp(grid.nodes * L) * (1 + c * grid.ds) * (1 + 1e-12)
    ratio = sep / bound
    return {"violations": int(np.count_nonzero(ratio > 1.0)), "max_ratio": float(ratio.max()),
            "paths": n_samples}


def mode_consistency_residual(u: VectorField, t: float, points) -> float:
    """``max |(grad u - grad u^T) curl u|`` over ``points``; zero for exact fields."""
    pts = np.asarray(points, dtype=float)
    J = u.gradient(t, pts)
    w = u.curl(t, pts)
    r = np.einsum("...ij,...j->...i", J - np.swapaxes(J, -1, -2), w)
    return float(np.max(np.linalg.norm(r, axis=-1)))
