"""Deterministic reference values: closed forms, dense quadrature and finite differences.

Every oracle returns ``(value, error_estimate)``; the error estimate is zero
for closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve

from .fields import LambOseenSlice, VectorField

ORACLES = ("heat_convolution", "ball_potential", "gaussian_potential", "kernel_biot_savart",
           "lamb_oseen", "linear_ode_mean", "fd_parabolic_1d")


def heat_convolution(x, t: float, nu: float, amplitude=1.0, width: float = 1.0, dim: int = 3):
    """``E[phi(x + sqrt(2 nu) W_t)]`` for ``phi = amplitude exp(-|y|^2 / (2 width^2))``."""
    x = np.asarray(x, dtype=float)
    if t < 0 or nu <= 0:
        raise ValueError("need t >= 0 and nu > 0")
    v = width**2 + 2 * nu * t
    g = (width**2 / v) ** (dim / 2) * np.exp(-0.5 * np.sum(x * x, axis=-1) / v)
    amp = np.asarray(amplitude, dtype=float)
    return (g[..., None] * amp if amp.ndim else g * float(amp)), 0.0


def cos_heat_1d(x, k: float, tau: float):
    """``E[cos(k (x + W_tau))] = cos(k x) exp(-k^2 tau / 2)``."""
    return np.cos(k * np.asarray(x, dtype=float)) * math.exp(-k * k * tau / 2), 0.0


def ou_cos_mean(x: float, theta: float, sigma: float, k: float, T: float):
    """``E[cos(k X_T)]`` for ``dX = -theta X ds + sigma dW``, ``X_0 = x``."""
    m = x * math.exp(-theta * T)
    v = sigma**2 * (1 - math.exp(-2 * theta * T)) / (2 * theta)
    return math.cos(k * m) * math.exp(-k * k * v / 2), 0.0


def ou_cos_mean_euler(x: float, theta: float, sigma: float, k: float, T: float, n_steps: int):
    """The same expectation for the Euler chain on ``n_steps`` steps (exact, Gaussian)."""
    ds = T / n_steps
    a = 1 - theta * ds
    m = x * a**n_steps
    v = sigma**2 * ds * sum(a ** (2 * j) for j in range(n_steps))
    return math.cos(k * m) * math.exp(-k * k * v / 2), 0.0


def ball_potential(x, radius: float = 1.0):
    """Newtonian potential of the indicator of the ball of ``radius``."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if r <= radius:
        return (3 * radius**2 - r * r) / 6.0, 0.0
    return radius**3 / (3.0 * r), 0.0


def ball_potential_gradient(x, radius: float = 1.0):
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r <= radius:
        return -x / 3.0, 0.0
    return -(radius**3) * x / (3.0 * r**3), 0.0


def gaussian_potential(x, amplitude: float = 1.0, width: float = 1.0):
    """Newtonian potential of ``amplitude exp(-|y|^2 / (2 width^2))`` and its gradient.

    ``N f(r) = m erf(r / (sqrt(2) width)) / (4 pi r)`` with ``m`` the mass;
    returns ``((value, gradient), 0.0)``.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    r = float(np.linalg.norm(x))
    a = math.sqrt(2.0) * width
    m = amplitude * (2 * math.pi) ** 1.5 * width**3
    c = m / (4 * math.pi)
    if r < 1e-6 * width:
        # erf(z)/z = 2/sqrt(pi) (1 - z^2/3 + ...)
        val = c * 2 / (math.sqrt(math.pi) * a) * (1 - (r / a) ** 2 / 3)
        grad = -c * 4 / (3 * math.sqrt(math.pi) * a**3) * x
        return (val, grad), 0.0
    e = math.erf(r / a)
    val = c * e / r
    dr = c * (2 / (math.sqrt(math.pi) * a) * math.exp(-(r / a) ** 2) / r - e / r**2)
    return (val, dr * x / r), 0.0


def lamb_oseen(x, t: float, circulation: float = 1.0, nu: float = 0.1, t0: float = 1.0):
    """Axial vorticity of the Lamb-Oseen vortex, ``t`` after the reference time ``t0``."""
    return LambOseenSlice(circulation, nu, t0).vorticity_value(t, np.asarray(x, dtype=float)), 0.0


def linear_ode_mean(A, c, m0, s: float):
    """``m(s)`` for ``dm/ds = -(A m + c)``, by the exponential of the augmented matrix."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    B = np.zeros((d + 1, d + 1))
    B[:d, :d] = -A
    B[:d, d] = -np.asarray(c, dtype=float)
    y = expm(s * B) @ np.append(np.asarray(m0, dtype=float), 1.0)
    return y[:d], 0.0


def _bs_kernel_quadrature(xi, x, rho_max, n_rho, n_theta, n_phi):
    # u(x) = 1/(4 pi) int_0^inf int_{S^2} w x xi(x + rho w) dw drho
    gr, wr = np.polynomial.legendre.leggauss(n_rho)
    rho = 0.5 * rho_max * (gr + 1)
    wr = 0.5 * rho_max * wr
    gc, wc = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    wphi = 2 * np.pi / n_phi
    st = np.sqrt(1 - gc**2)
    om = np.stack([st[:, None] * np.cos(phi)[None], st[:, None] * np.sin(phi)[None],
                   np.broadcast_to(gc[:, None], (n_theta, n_phi))], axis=-1).reshape(-1, 3)
    wom = (wc[:, None] * wphi * np.ones(n_phi)[None]).reshape(-1)
    Y = x[None, None, :] + rho[:, None, None] * om[None, :, :]
    V = xi(Y)
    cr = np.cross(np.broadcast_to(om[None], V.shape), V)
    return np.einsum("r,a,rac->c", wr, wom, cr) / (4 * np.pi)


def kernel_biot_savart(xi, x, rho_max: float = 8.0, n_rho: int = 64, n_theta: int = 48, n_phi: int = 96):
    """Biot-Savart velocity ``1/(4 pi) int xi(y) x (x - y) / |x - y|^3 dy`` by spherical quadrature.

    Centred at ``x`` the kernel singularity cancels against the volume
    element.  ``xi`` is a :class:`VectorField` (at time 0) or a callable of
    points; it must be negligible beyond ``rho_max`` from ``x``.  The error
    estimate is the change against a run at half the resolution.
    """
    fn = (lambda y: xi.value(0.0, y)) if isinstance(xi, VectorField) else xi
    x = np.asarray(x, dtype=float).reshape(3)
    fine = _bs_kernel_quadrature(fn, x, rho_max, n_rho, n_theta, n_phi)
    coarse = _bs_kernel_quadrature(fn, x, rho_max, n_rho // 2, n_theta // 2, n_phi // 2)
    return fine, float(np.max(np.abs(fine - coarse)))


def fd_parabolic_1d(phi, x_query, tau: float, sigma: float = 1.0, drift=None, potential=None,
                    half_width: float = math.pi, n: int = 1024, n_steps: int = 2000):
    """Crank-Nicolson solution of ``v_s = sigma^2/2 v_xx + b v_x + lam v`` on a periodic interval.

    ``phi``, ``drift`` (``b``) and ``potential`` (``lam``) are callables of
    ``x``; the data must be periodic on ``[-half_width, half_width)``.  The
    value at ``x_query`` is interpolated trigonometrically; the error
    estimate compares against half the spatial resolution.
    """
    def solve(m):
        h = 2 * half_width / m
        xs = -half_width + h * np.arange(m)
        I = np.eye(m)
        Dp = (np.roll(I, 1, axis=1) - np.roll(I, -1, axis=1)) / (2 * h)
        D2 = (np.roll(I, 1, axis=1) - 2 * I + np.roll(I, -1, axis=1)) / h**2
        L = 0.5 * sigma**2 * D2
        if drift is not None:
            L = L + np.diag(drift(xs)) @ Dp
        if potential is not None:
            L = L + np.diag(potential(xs))
        dt = tau / n_steps
        lu = lu_factor(I - 0.5 * dt * L)
        B = I + 0.5 * dt * L
        v = np.asarray(phi(xs), dtype=float)
        for _ in range(n_steps):
            v = lu_solve(lu, B @ v)
        c = np.fft.rfft(v)
        k = np.fft.rfftfreq(m, d=h) * 2 * np.pi
        xq = np.atleast_1d(np.asarray(x_query, dtype=float))
        phase = np.exp(1j * np.outer(xq + half_width, k))
        wts = np.full(k.size, 2.0)
        wts[0] = 1.0
        if m % 2 == 0:
            wts[-1] = 1.0
        return (phase @ (c * wts)).real / m

    fine = solve(n)
    coarse = solve(n // 2)
    return fine, float(np.max(np.abs(fine - coarse)))


@dataclass(frozen=True)
class OracleSpec:
    name: str
    params: dict

    def __post_init__(self):
        if self.name not in ORACLES:
            raise ValueError(f"unknown oracle {self.name!r}; known: {', '.join(ORACLES)}")


def oracle_reference(spec: OracleSpec, **query):
    """Dispatch a query ``(value, error_estimate)`` to the named oracle."""
    fn = {
        "heat_convolution": heat_convolution,
        "ball_potential": ball_potential,
        "gaussian_potential": gaussian_potential,
        "kernel_biot_savart": kernel_biot_savart,
        "lamb_oseen": lamb_oseen,
        "linear_ode_mean": linear_ode_mean,
        "fd_parabolic_1d": fd_parabolic_1d,
    }[spec.name]
    try:
        return fn(**{**spec.params, **query})
    except TypeError as e:
        raise ValueError(f"query outside the domain of {spec.name}: {e}") from None
