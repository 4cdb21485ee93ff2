"""Monte Carlo solvers for linear parabolic systems coupled through the zero-order term.

The system on ``R^d`` with ``l`` components is

    final-condition:    d_t v + L v + D v + f = 0,  v(T) = phi
    initial-condition:  d_t v = L v + D v + f,      v(0) = phi

with ``L = 1/2 a_ij d_ij + b . grad`` and ``a = sigma sigma^T``.  Every solver
simulates characteristics with the deformation matrices ``dU = U D ds`` and
averages ``U phi(X)`` plus a left-endpoint rectangle rule for the source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .estimate import InvariantViolation, MCEstimate
from .kernel import integrate_paths
from .rng import BrownianDriver, TimeGrid

FINAL = "final-condition"
INITIAL = "initial-condition"


def _as_coefficient(value, shape: tuple) -> Callable | None:
    """Constant or callable ``(t, x)`` coefficient as a callable; ``None`` stays ``None``."""
    if value is None or callable(value):
        return value
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        arr = np.broadcast_to(arr, shape)
    arr = np.array(arr)

    def const(t, x, _a=arr):
        return np.broadcast_to(_a, np.shape(x)[:-1] + _a.shape)

    const.constant = arr
    return const


def _constant_of(fn):
    return getattr(fn, "constant", None)


@dataclass
class ParabolicSystemSpec:
    """Coefficients of a coupled parabolic system.

    ``b``, ``sigma``, ``D`` and ``f`` may be constants or callables of
    ``(t, x)`` with ``x`` of shape ``(..., d)``; ``phi`` is a callable of
    ``x`` or a constant.  ``sigma`` may be a scalar (times the identity).
    ``D_bound``, ``f_bound`` and ``phi_bound`` are user-asserted sup bounds,
    used for the boundedness check; ``T`` is the final time for the
    final-condition direction.
    """

    d: int
    l: int
    phi: object
    b: object = None
    sigma: object = 1.0
    D: object = None
    f: object = None
    direction: str = FINAL
    T: float = 1.0
    D_bound: float | None = None
    f_bound: float | None = None
    phi_bound: float | None = None

    def __post_init__(self):
        if self.direction not in (FINAL, INITIAL):
            raise ValueError(f"direction must be {FINAL!r} or {INITIAL!r}")
        if self.d < 1 or self.l < 1:
            raise ValueError("d and l must be >= 1")
        for name in ("D_bound", "f_bound", "phi_bound"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        self._b = _as_coefficient(self.b, (self.d,))
        self._D = _as_coefficient(self.D, (self.l, self.l))
        self._f = _as_coefficient(self.f, (self.l,))
        if callable(self.sigma):
            self._sigma = self.sigma
        else:
            s = np.asarray(self.sigma, dtype=float)
            if s.ndim == 0:
                self._sigma = float(s)
            else:
                self._sigma = _as_coefficient(s, (self.d, self.d))
        if callable(self.phi):
            self._phi = self.phi
        else:
            c = np.broadcast_to(np.asarray(self.phi, dtype=float), (self.l,)).copy()
            self._phi = lambda x, _c=c: np.broadcast_to(_c, np.shape(x)[:-1] + _c.shape)
        Dc = _constant_of(self._D)
        if self.D_bound is None and Dc is not None:
            self.D_bound = float(np.linalg.norm(Dc, 2))
        fc = _constant_of(self._f)
        if self.f_bound is None and fc is not None:
            self.f_bound = float(np.linalg.norm(fc))
        if self.f is None and self.f_bound is None:
            self.f_bound = 0.0
        if self.D is None and self.D_bound is None:
            self.D_bound = 0.0

    @property
    def has_source(self) -> bool:
        fc = _constant_of(self._f)
        return self._f is not None and not (fc is not None and not fc.any())

    def phi_values(self, x):
        return np.asarray(self._phi(x), dtype=float).reshape(np.shape(x)[:-1] + (self.l,))


def augment_inhomogeneous(spec: ParabolicSystemSpec) -> ParabolicSystemSpec:
    """Homogeneous ``(l + 1)``-system ``D~ = [[D, f], [0, 0]]``, ``phi~ = (phi, 1)``.

    The top-right block of its deformation matrix accumulates the source
    integral, so component ``l + 1`` of the solution is identically 1 and the
    first ``l`` components reproduce the inhomogeneous solution.
    """
    l = spec.l
    Dfn, ffn, phifn = spec._D, spec._f, spec._phi

    def D_aug(t, x):
        shape = np.shape(x)[:-1]
        out = np.zeros(shape + (l + 1, l + 1))
        if Dfn is not None:
            out[..., :l, :l] = Dfn(t, x)
        if ffn is not None:
            out[..., :l, l] = ffn(t, x)
        return out

    def phi_aug(x):
        shape = np.shape(x)[:-1]
        out = np.ones(shape + (l + 1,))
        out[..., :l] = np.asarray(phifn(x), dtype=float).reshape(shape + (l,))
        return out

    bound = None
    if spec.D_bound is not None and spec.f_bound is not None:
        bound = spec.D_bound + spec.f_bound
    phib = None if spec.phi_bound is None else math.hypot(spec.phi_bound, 1.0)
    return ParabolicSystemSpec(spec.d, l + 1, phi_aug, spec.b, spec.sigma, D_aug, None, spec.direction,
                               spec.T, bound, 0.0, phib)


def _matvec(U, v):
    return np.einsum("...ij,...j->...i", U, v)


def _time_map(spec: ParabolicSystemSpec, t: float, grid: TimeGrid):
    if spec.direction == FINAL:
        return lambda k: t + grid.node(k)
    return lambda k: t - grid.node(k)


def _check_grid(spec, t, grid):
    horizon = spec.T - t if spec.direction == FINAL else t
    if horizon < 0:
        raise ValueError(f"t = {t} lies beyond the final time T = {spec.T}")
    if not math.isclose(grid.horizon, horizon, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError(f"grid horizon {grid.horizon} does not match the solve horizon {horizon}")


def _point(spec, x):
    x = np.asarray(x, dtype=float).reshape(spec.d)
    return x


def _drift(spec, time):
    if spec._b is None:
        return None
    return lambda k, X: spec._b(time(k), X)


def _diffusion(spec, time):
    if callable(spec._sigma):
        return lambda k, X: spec._sigma(time(k), X)
    return spec._sigma


def _coupling(spec, time):
    if spec._D is None:
        return None
    return lambda k, X: spec._D(time(k), X)


def _run_forward(spec, t, x, grid, driver, n_samples, with_source):
    """Per-sample values of ``U_n phi(X_n) + sum_k ds U_k f(time_k, X_k)``."""
    time = _time_map(spec, t, grid)
    drv = driver.with_dim(spec.d)
    coupling = _coupling(spec, time)
    sq = math.sqrt(grid.ds)

    def block(start, count, z):
        acc = np.zeros((count, spec.l))
        final = {}

        def on_step(k, X, U):
            if k == grid.n_steps:
                final["X"], final["U"] = X, U
                return
            if with_source:
                fk = spec._f(time(k), X)
                acc[...] = acc + grid.ds * (fk if U is None else _matvec(U, fk))

        integrate_paths(x, grid, z * sq, _drift(spec, time), _diffusion(spec, time),
                        coupling, spec.l, on_step, start)
        ph = spec.phi_values(final["X"])
        term = ph if final["U"] is None else _matvec(final["U"], ph)
        return term + acc if with_source else term

    return np.concatenate(drv.map_blocks(block, n_samples, grid.n_steps), axis=0)


def _bounded(spec, grid, est: MCEstimate, slack: float):
    if spec.phi_bound is None or spec.D_bound is None or spec.f_bound is None:
        return
    h = grid.horizon
    lim = math.exp(h * spec.D_bound) * (spec.phi_bound + h * spec.f_bound) * (1 + slack)
    worst = float(np.max(np.linalg.norm(np.atleast_1d(est.value))))
    est.diagnostics["bound"] = lim
    if worst > lim:
        raise InvariantViolation(f"|estimate| = {worst} exceeds the a-priori bound {lim}")


def _estimate(spec, samples, driver, grid, slack):
    est = MCEstimate.from_samples(samples, driver.master_seed, grid)
    _bounded(spec, grid, est, slack)
    return est


def solve_final_value_homogeneous(spec: ParabolicSystemSpec, t: float, x, grid: TimeGrid,
                                  driver: BrownianDriver, n_samples: int, slack: float = 0.05) -> MCEstimate:
    """``v(t, x) = E[U_T phi(X_T)]`` for a source-free final-value problem."""
    if spec.direction != FINAL:
        raise ValueError("spec is not a final-condition problem")
    if spec.has_source:
        raise ValueError("spec has a source term; use solve_final_value")
    _check_grid(spec, t, grid)
    return _estimate(spec, _run_forward(spec, t, _point(spec, x), grid, driver, n_samples, False),
                     driver, grid, slack)


def solve_final_value(spec: ParabolicSystemSpec, t: float, x, grid: TimeGrid,
                      driver: BrownianDriver, n_samples: int, slack: float = 0.05) -> MCEstimate:
    """``v(t, x) = E[U_T phi(X_T)] + int_t^T E[U_r f(r, X_r)] dr``."""
    if spec.direction != FINAL:
        raise ValueError("spec is not a final-condition problem")
    _check_grid(spec, t, grid)
    return _estimate(spec, _run_forward(spec, t, _point(spec, x), grid, driver, n_samples,
                                        spec._f is not None), driver, grid, slack)


def solve_initial_value(spec: ParabolicSystemSpec, t: float, x, grid: TimeGrid,
                        driver: BrownianDriver, n_samples: int, slack: float = 0.05) -> MCEstimate:
    """``v(t, x) = E[U_t phi(X_t)] + int_0^t E[U_r f(t - r, X_r)] dr``.

    Coefficients are evaluated at the reversed time ``t - r``.
    """
    if spec.direction != INITIAL:
        raise ValueError("spec is not an initial-condition problem")
    _check_grid(spec, t, grid)
    return _estimate(spec, _run_forward(spec, t, _point(spec, x), grid, driver, n_samples,
                                        spec._f is not None), driver, grid, slack)


def solve_initial_value_backward(spec: ParabolicSystemSpec, t: float, x, grid: TimeGrid,
                                 driver: BrownianDriver, n_samples: int, slack: float = 0.05) -> MCEstimate:
    """Backward-path form ``E[V_t^0 phi(Y_0)] + int_0^t E[V_t^r f(r, Y_r)] dr``.

    The backward characteristic and its deformation matrices are the
    forward ones read in reverse, ``Y_r = X_{t-r}`` and ``V_t^r = U_{t-r}``.
    Each block of forward paths is stored and then traversed in reversed
    time, with the source evaluated at ``r = t - s_k``; the result is
    identical bit-for-bit to :func:`solve_initial_value`.
    """
    if spec.direction != INITIAL:
        raise ValueError("spec is not an initial-condition problem")
    _check_grid(spec, t, grid)
    x = _point(spec, x)
    n = grid.n_steps
    forward_time = _time_map(spec, t, grid)
    with_source = spec._f is not None
    drv = driver.with_dim(spec.d)
    sq = math.sqrt(grid.ds)

    def block(start, count, z):
        Xs, Us = [], []

        def keep(k, X, U):
            Xs.append(X)
            Us.append(U)

        integrate_paths(x, grid, z * sq, _drift(spec, forward_time), _diffusion(spec, forward_time),
                        _coupling(spec, forward_time), spec.l, keep, start)
        # Reversed indexing: node j of the backward path is forward node n - j.
        Y = Xs[::-1]
        V = Us[::-1]
        acc = np.zeros((count, spec.l))
        if with_source:
            for j in range(n, 0, -1):
                r = t - grid.node(n - j)
                fr = spec._f(r, Y[j])
                acc = acc + grid.ds * (fr if V[j] is None else _matvec(V[j], fr))
        ph = spec.phi_values(Y[0])
        term = ph if V[0] is None else _matvec(V[0], ph)
        return term + acc if with_source else term

    samples = np.concatenate(drv.map_blocks(block, n_samples, n), axis=0)
    return _estimate(spec, samples, driver, grid, slack)


def autonomous_as_final(spec: ParabolicSystemSpec, horizon: float) -> ParabolicSystemSpec:
    """Final-value copy of a time-independent initial-value spec with ``T = horizon``."""
    return replace(spec, direction=FINAL, T=float(horizon))
