"""Newtonian potential, its derivatives and the Biot-Savart velocity by Brownian averages.

With ``p_s`` the heat kernel of ``W_s`` (variance ``s`` per component),

    N f(x)        = 1/2 int_0^inf E[f(x + W_s)] ds
    d_i N f(x)    = 1/2 int_0^inf s^-1 E[f(x + W_s) W_s^i] ds
    d_ij N f(x)   = 1/2 int_0^inf (4 / s^2) E[f(x + W_{s/2} + W'_{s/2}) W'^i W^j] ds
    u(x)          = 1/2 int_0^inf s^-1 E[W_s x xi(x + W_s)] ds

The time integral runs over log-spaced nodes.  One Brownian path per sample
is observed at all nodes, so nodes share their noise.  Below ``s = 1`` the
derivative estimators subtract the value at ``x`` (zero-mean control), which
keeps the small-``s`` variance bounded for Hoelder data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimate import InvariantViolation, MCEstimate, TruncationError
from .fields import VectorField
from .rng import BrownianDriver

_CENTRE_BELOW = 1.0
_TWO_PI = 2.0 * math.pi


def _chi3_moment(q: float) -> float:
    """``E|Z|^q`` for a standard normal ``Z`` in R^3."""
    return 2.0 ** (q / 2) * math.gamma((3 + q) / 2) / math.gamma(1.5)


def _radial_norm(m: int, r: float) -> float:
    """``|| g_m ||_r`` on R^3 for ``g_1 = |z| p_1(z)`` and ``g_2 = (|z|^2 + 1) p_1(z)``."""
    def g(rho):
        base = (_TWO_PI) ** -1.5 * np.exp(-0.5 * rho * rho)
        return base * (rho if m == 1 else rho * rho + 1.0)

    if math.isinf(r):
        # both profiles peak at |z| = 1
        return float(g(np.array(1.0)))
    rho = np.linspace(0.0, 40.0, 400001)
    vals = 4 * math.pi * rho**2 * g(rho) ** r
    return float(np.trapezoid(vals, rho) ** (1.0 / r))


def _heat_norm(r: float) -> float:
    """``|| p_1 ||_r``; ``|| p_s ||_r = s^{-3/(2 r')} || p_1 ||_r``."""
    if math.isinf(r):
        return _TWO_PI ** -1.5
    return _TWO_PI ** (-1.5 + 1.5 / r) * r ** (-1.5 / r)


def _conjugate(p: float) -> float:
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


@dataclass
class DensityField:
    """Density ``f: R^3 -> R^c`` with the integrability data the estimators rely on.

    ``p < 3/2 < q`` are declared exponents; ``norm(r)`` returns ``||f||_r``.
    ``mass = int f`` and ``second_moment = int |y|^2 |f|`` enable the
    analytic large-``s`` correction; ``alpha`` and ``hoelder`` (``[f]_alpha``)
    enable the sharper small-``s`` bounds.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    components: int
    p: float
    q: float
    norm: Callable[[float], float]
    sup: float
    mass: np.ndarray | None = None
    l1: float | None = None
    second_moment: float | None = None
    alpha: float | None = None
    hoelder: float | None = None
    name: str = "density"

    def __post_init__(self):
        if not (1.0 <= self.p < 1.5 < self.q):
            raise ValueError(f"need 1 <= p < 3/2 < q, got p={self.p}, q={self.q}")
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.mass is not None:
            self.mass = np.atleast_1d(np.asarray(self.mass, dtype=float))

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float).reshape(
            np.shape(x)[:-1] + (self.components,))

    def scaled(self, a: float) -> "DensityField":
        a = float(a)
        return DensityField(
            lambda x: a * self.fn(x), self.components, self.p, self.q,
            lambda r: abs(a) * self.norm(r), abs(a) * self.sup,
            None if self.mass is None else a * self.mass,
            None if self.l1 is None else abs(a) * self.l1,
            None if self.second_moment is None else abs(a) * self.second_moment,
            self.alpha, None if self.hoelder is None else abs(a) * self.hoelder, self.name)

    # --- constructors ---------------------------------------------------

    @classmethod
    def zero(cls, components: int = 1) -> "DensityField":
        return cls(lambda x: np.zeros(np.shape(x)[:-1] + (components,)), components, 1.0, math.inf,
                   lambda r: 0.0, 0.0, np.zeros(components), 0.0, 0.0, 1.0, 0.0, "zero")

    @classmethod
    def ball_indicator(cls, radius: float = 1.0) -> "DensityField":
        vol = 4.0 / 3.0 * math.pi * radius**3

        def fn(x):
            return (np.sum(x * x, axis=-1) <= radius * radius).astype(float)[..., None]

        return cls(fn, 1, 1.0, math.inf, lambda r: 1.0 if math.isinf(r) else vol ** (1.0 / r), 1.0,
                   np.array([vol]), vol, 4.0 * math.pi * radius**5 / 5.0, name="ball_indicator")

    @classmethod
    def gaussian(cls, amplitude=1.0, width: float = 1.0, center=(0.0, 0.0, 0.0),
                 alpha: float | None = 1.0) -> "DensityField":
        """``amplitude * exp(-|x - center|^2 / (2 width^2))``."""
        amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
        c = np.asarray(center, dtype=float)
        a = float(np.linalg.norm(amp))
        vol = (_TWO_PI * width**2) ** 1.5

        def fn(x):
            d = x - c
            return np.exp(-0.5 * np.sum(d * d, axis=-1) / width**2)[..., None] * amp

        def norm(r):
            return a if math.isinf(r) else a * (_TWO_PI * width**2 / r) ** (1.5 / r)

        hold = None
        if alpha is not None:
            lip = a * math.exp(-0.5) / width
            hold = lip**alpha * (2 * a) ** (1 - alpha)
        return cls(fn, amp.size, 1.0, math.inf, norm, a, amp * vol, a * vol,
                   a * vol * (3 * width**2 + float(c @ c)), alpha, hold, "gaussian")

    @classmethod
    def from_field(cls, fld: VectorField, R: float, h: float, t: float = 0.0, p: float = 1.0,
                   q: float = math.inf, alpha: float | None = None, hoelder: float | None = None,
                   lipschitz: float | None = None) -> "DensityField":
        """Density backed by a field at time ``t``; integrals by midpoint quadrature on ``[-R, R]^3``.

        The field is treated as zero outside the box.  With ``lipschitz``
        given, ``alpha = 1`` and ``hoelder = lipschitz`` unless set otherwise.
        """
        n = int(round(2 * R / h))
        c = -R + h * (np.arange(n) + 0.5)
        Y = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
        V = fld.value(t, Y)
        mag = np.linalg.norm(V, axis=-1)
        dv = h**3
        mass = V.sum(axis=0) * dv
        l1 = float(mag.sum() * dv)
        m2 = float((mag * np.sum(Y * Y, axis=-1)).sum() * dv)
        sup = float(mag.max()) if mag.size else 0.0
        cache = {}

        def norm(r):
            if math.isinf(r):
                return sup
            if r not in cache:
                cache[r] = float((np.sum(mag**r) * dv) ** (1.0 / r))
            return cache[r]

        if lipschitz is not None and alpha is None:
            alpha, hoelder = 1.0, lipschitz
        inside = R
        if getattr(fld, "outside", None) == "zero" and getattr(fld, "R", math.inf) <= R:
            return cls(lambda x: fld.value(t, x), V.shape[-1], p, q, norm, sup, mass, l1, m2, alpha,
                       hoelder, "field")

        def fn(x):
            out = fld.value(t, x)
            mask = np.all(np.abs(x) <= inside, axis=-1)
            return np.where(mask[..., None], out, 0.0)

        return cls(fn, V.shape[-1], p, q, norm, sup, mass, l1, m2, alpha, hoelder, "field")


@dataclass(frozen=True)
class TimeQuadrature:
    """Trapezoid rule in ``log s`` on ``n_nodes`` log-spaced nodes of ``[s_min, s_max]``."""

    s_min: float = 1e-4
    s_max: float = 1e4
    n_nodes: int = 32

    def __post_init__(self):
        if not (0 < self.s_min < self.s_max and math.isfinite(self.s_max)):
            raise ValueError("need 0 < s_min < s_max < inf")
        if self.n_nodes < 2:
            raise ValueError("need at least two nodes")

    @property
    def nodes(self) -> np.ndarray:
        return np.geomspace(self.s_min, self.s_max, self.n_nodes)

    @property
    def weights(self) -> np.ndarray:
        s = self.nodes
        dlog = math.log(self.s_max / self.s_min) / (self.n_nodes - 1)
        w = s * dlog
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    # --- truncation bounds (for the 1/2-scaled integrals) -----------------

    def value_tail(self, f: DensityField, x) -> tuple[float, np.ndarray]:
        """(bound, correction) for ``1/2 int_{s_max}^inf E f(x + W_s) ds``."""
        S = self.s_max
        if f.mass is not None and f.l1 is not None and f.second_moment is not None:
            corr = 0.5 * 2.0 * f.mass * _TWO_PI**-1.5 * S**-0.5
            xx = float(np.dot(x, x))
            bound = 0.5 * _TWO_PI**-1.5 * (xx * f.l1 + f.second_moment) * (2.0 / 3.0) * S**-1.5
            return bound, corr
        rp = _conjugate(f.p)
        e = 1.5 / f.p
        bound = 0.5 * f.norm(f.p) * _heat_norm(rp) * S ** (1 - e) / (e - 1)
        return bound, np.zeros(f.components)

    def value_head(self, f: DensityField) -> float:
        return 0.5 * self.s_min * f.sup

    def first_order_tail(self, f: DensityField) -> float:
        e = 0.5 + 1.5 / f.p
        return 0.5 * f.norm(f.p) * _radial_norm(1, _conjugate(f.p)) * self.s_max ** (1 - e) / (e - 1)

    def first_order_head(self, f: DensityField) -> float:
        s = self.s_min
        if f.alpha is not None and f.hoelder is not None:
            a = f.alpha
            return 0.5 * f.hoelder * _chi3_moment(1 + a) * s ** ((1 + a) / 2) / ((1 + a) / 2)
        return 0.5 * f.sup * _chi3_moment(1) * 2.0 * math.sqrt(s)

    def second_order_tail(self, f: DensityField) -> float:
        e = 1.5 / f.p
        return 0.5 * f.norm(f.p) * _radial_norm(2, _conjugate(f.p)) * self.s_max ** (-e) / e

    def second_order_head(self, f: DensityField) -> float:
        if f.alpha is None or f.hoelder is None:
            return math.inf
        a = f.alpha
        m = _chi3_moment(a + 2) + _chi3_moment(a)
        return 0.5 * f.hoelder * m * self.s_min ** (a / 2) / (a / 2)


def sup_bound_constant(f: DensityField) -> float:
    """``C`` with ``|N f| <= C (||f||_p + ||f||_q)``, from splitting the time integral at ``s = 1``."""
    rq, rp = _conjugate(f.q), _conjugate(f.p)
    eq = 1.5 / f.q
    ep = 1.5 / f.p
    head = _heat_norm(rq) / (1 - eq)
    tail = _heat_norm(rp) / (ep - 1)
    return 0.5 * max(head, tail)


def _points(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x).reshape(-1, 3), single


def _brownian_at(z: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Cumulative Brownian values at ``times`` from normals ``z`` of shape ``(count, J, dim)``."""
    dt = np.diff(np.concatenate([[0.0], times]))
    return np.cumsum(z * np.sqrt(dt)[None, :, None], axis=1)


def _per_sample(kernel, n_nodes, driver: BrownianDriver, n_samples: int, stream: int, dim: int):
    """Stack per-sample quadrature sums produced blockwise by ``kernel(z)``."""
    drv = driver.with_dim(dim)
    parts = drv.map_blocks(lambda start, count, z: kernel(z), n_samples, n_nodes, stream)
    return np.concatenate(parts, axis=0)


def _pack(samples, driver, quad, single, squeeze_comp, **diag):
    est = MCEstimate.from_samples(samples, driver.master_seed, quad, **diag)
    v, se = est.value, est.std_error
    if squeeze_comp:
        v, se = v[:, 0], se[:, 0]
    if single:
        v, se = v[0], se[0]
    return MCEstimate(v, se, est.n_samples, est.seed, quad, est.diagnostics)


def _check_tail(bound: float, tol: float, what: str):
    if bound > tol:
        raise TruncationError(f"{what}: tail bound {bound:.3g} beyond s_max exceeds tolerance {tol:.3g}")


def newtonian_potential(f: DensityField, x, quad: TimeQuadrature, driver: BrownianDriver,
                        n_samples: int, tol: float = 1e-3, stream: int = 0) -> MCEstimate:
    """``N f(x) = 1/2 int_0^inf E f(x + W_s) ds``.

    The large-``s`` tail is replaced by its leading term ``m (2 pi)^{-3/2}
    s_max^{-1/2}`` when the mass ``m`` is known; the bound on what remains is
    reported and must not exceed ``tol``.
    """
    pts, single = _points(x)
    s, w = quad.nodes, quad.weights
    fx = f(pts)
    tails = [quad.value_tail(f, p) for p in pts]
    tail_bound = max(b for b, _ in tails)
    _check_tail(tail_bound, tol, "newtonian_potential")
    corr = np.stack([c for _, c in tails]) + 0.5 * quad.s_min * fx

    def kernel(z):
        W = _brownian_at(z, s)
        acc = np.zeros((z.shape[0], pts.shape[0], f.components))
        for j in range(s.size):
            acc += w[j] * np.swapaxes(f(pts[:, None, :] + W[None, :, j]), 0, 1)
        return 0.5 * acc + corr

    samples = _per_sample(kernel, s.size, driver, n_samples, stream, 3)
    est = _pack(samples, driver, quad, single, f.components == 1,
                truncation_bound=tail_bound + quad.value_head(f), tail_bound=tail_bound)
    C = sup_bound_constant(f)
    lim = C * (f.norm(f.p) + f.norm(f.q))
    est.diagnostics["sup_bound"] = lim
    worst = np.max(np.abs(est.value) - 3 * est.std_error - est.diagnostics["truncation_bound"])
    if worst > lim:
        raise InvariantViolation(f"|N f| = {worst} exceeds the sup bound {lim}")
    return est


def potential_gradient(f: DensityField, x, quad: TimeQuadrature, driver: BrownianDriver,
                       n_samples: int, tol: float = 1e-3, stream: int = 0) -> MCEstimate:
    """``grad N f(x)`` by the Bismut-Elworthy weight ``s^-1 W_s``; shape ``(3,)`` for scalar ``f``."""
    if f.q <= 3:
        warnings.warn(f"declared q = {f.q} <= 3; the gradient representation may not converge")
    pts, single = _points(x)
    s, w = quad.nodes, quad.weights
    fx = f(pts)
    tail = quad.first_order_tail(f)
    _check_tail(tail, tol, "potential_gradient")
    centre = s < _CENTRE_BELOW

    def kernel(z):
        W = _brownian_at(z, s)
        acc = np.zeros((z.shape[0], pts.shape[0], f.components, 3))
        for j in range(s.size):
            v = np.swapaxes(f(pts[:, None, :] + W[None, :, j]), 0, 1)
            if centre[j]:
                v = v - fx[None]
            acc += (w[j] / s[j]) * v[..., :, None] * W[:, j][:, None, None, :]
        return 0.5 * acc

    samples = _per_sample(kernel, s.size, driver, n_samples, stream, 3)
    return _pack(samples, driver, quad, single, f.components == 1,
                 truncation_bound=tail + quad.first_order_head(f), tail_bound=tail)


def potential_hessian(f: DensityField, x, quad: TimeQuadrature, driver: BrownianDriver,
                      n_samples: int, tol: float = 1e-3, stream: int = 0) -> MCEstimate:
    """Second derivatives ``d_i d_j N f(x)`` of a scalar density by nested half-interval weights.

    ``diagnostics["trace"]`` holds ``(value, std_error)`` of the Laplacian,
    computed from per-sample traces.
    """
    if f.components != 1:
        raise ValueError("the Hessian estimator takes a scalar density")
    if f.alpha is None:
        raise ValueError("a Hoelder exponent must be declared for the Hessian estimator")
    pts, single = _points(x)
    s, w = quad.nodes, quad.weights
    fx = f(pts)
    tail = quad.second_order_tail(f)
    _check_tail(tail, tol, "potential_hessian")
    centre = s < _CENTRE_BELOW
    half = s / 2

    def kernel(z):
        B = _brownian_at(z, half)
        W, Wp = B[..., :3], B[..., 3:]
        acc = np.zeros((z.shape[0], pts.shape[0], 3, 3))
        for j in range(s.size):
            inner = pts[:, None, :] + Wp[None, :, j]
            v = f(inner + W[None, :, j])[..., 0]
            if centre[j]:
                v = v - f(inner)[..., 0]
            v = v.T
            acc += (w[j] * 4.0 / s[j] ** 2) * v[..., None, None] * (
                Wp[:, j][:, None, :, None] * W[:, j][:, None, None, :])
        return 0.5 * acc

    samples = _per_sample(kernel, s.size, driver, n_samples, stream, 6)
    tr = np.trace(samples, axis1=-2, axis2=-1)
    tr_est = MCEstimate.from_samples(tr, driver.master_seed)
    est = MCEstimate.from_samples(samples, driver.master_seed, quad)
    v, se = est.value, est.std_error
    tv, tse = tr_est.value, tr_est.std_error
    if single:
        v, se, tv, tse = v[0], se[0], tv[0], tse[0]
    bound = tail + quad.second_order_head(f)
    return MCEstimate(v, se, est.n_samples, est.seed, quad,
                      {"trace": (tv, tse), "truncation_bound": bound, "tail_bound": tail})


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _bs_samples(xi: DensityField, pts, quad, driver, n_samples, stream):
    s, w = quad.nodes, quad.weights
    xix = xi(pts)
    centre = s < _CENTRE_BELOW

    def kernel(z):
        W = _brownian_at(z, s)
        acc = np.zeros((z.shape[0], pts.shape[0], 3))
        for j in range(s.size):
            v = np.swapaxes(xi(pts[:, None, :] + W[None, :, j]), 0, 1)
            if centre[j]:
                v = v - xix[None]
            acc += (w[j] / s[j]) * _cross(W[:, j][:, None, :], v)
        return 0.5 * acc

    return _per_sample(kernel, s.size, driver, n_samples, stream, 3)


def biot_savart_velocity(xi: DensityField, x, quad: TimeQuadrature, driver: BrownianDriver,
                         n_samples: int, tol: float = 1e-3, stream: int = 0) -> MCEstimate:
    """Divergence-free velocity with curl ``xi``: ``1/2 int s^-1 E[W_s x xi(x + W_s)] ds``."""
    if xi.components != 3:
        raise ValueError("vorticity must have three components")
    pts, single = _points(x)
    tail = quad.first_order_tail(xi)
    _check_tail(tail, tol, "biot_savart_velocity")
    samples = _bs_samples(xi, pts, quad, driver, n_samples, stream)
    return _pack(samples, driver, quad, single, False,
                 truncation_bound=tail + quad.first_order_head(xi), tail_bound=tail)


@dataclass
class StencilCheck:
    """Finite-difference curl and divergence of the estimated velocity at one point."""

    point: np.ndarray
    h: float
    curl: MCEstimate
    divergence: MCEstimate
    velocity: MCEstimate = field(default=None)


def biot_savart_stencil(xi: DensityField, x, h: float, quad: TimeQuadrature, driver: BrownianDriver,
                        n_samples: int, tol: float = 1e-3, stream: int = 0) -> StencilCheck:
    """Central-difference curl and divergence of the velocity at ``x``.

    All seven stencil points share the same Brownian samples, so the
    per-sample differences carry their own standard errors.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    E = np.eye(3)
    pts = np.concatenate([x[None], x + h * E, x - h * E])
    _check_tail(quad.first_order_tail(xi), tol, "biot_savart_stencil")
    S = _bs_samples(xi, pts, quad, driver, n_samples, stream)
    # d[n, j, i] = d_j u_i per sample
    d = (S[:, 1:4] - S[:, 4:7]) / (2 * h)
    curl = np.stack([d[:, 1, 2] - d[:, 2, 1], d[:, 2, 0] - d[:, 0, 2], d[:, 0, 1] - d[:, 1, 0]], axis=-1)
    div = d[:, 0, 0] + d[:, 1, 1] + d[:, 2, 2]
    seed = driver.master_seed
    return StencilCheck(x, h, MCEstimate.from_samples(curl, seed, quad),
                        MCEstimate.from_samples(div, seed, quad),
                        MCEstimate.from_samples(S[:, 0], seed, quad))
