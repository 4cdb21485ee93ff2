"""Time-dependent vector fields on R^3: analytic, grid-backed, and their norms.

All fields share one calling convention: ``value(t, x)`` with scalar ``t`` and
``x`` of shape ``(..., 3)`` returns ``(..., c)``; ``gradient(t, x)`` returns
``(..., c, 3)`` with ``J[..., i, j] = d v_i / d x_j``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

_FD_STEP = 1e-5
_CHUNK = 1 << 18


class VectorField:
    """Base class.  Subclasses implement :meth:`value`; the rest has defaults.

    ``sup_bound`` and ``grad_bound`` are optional a-priori bounds on
    ``sup |v|`` and ``sup ||grad v||`` (operator norm); solvers use them for
    invariant checks when present.
    """

    components = 3
    sup_bound: float | None = None
    grad_bound: float | None = None

    def value(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cols = []
        for j in range(3):
            e = np.zeros(3)
            e[j] = _FD_STEP
            cols.append((self.value(t, x + e) - self.value(t, x - e)) / (2 * _FD_STEP))
        return np.stack(cols, axis=-1)

    def curl(self, t: float, x: np.ndarray) -> np.ndarray:
        return curl_from_gradient(self.gradient(t, x))

    def divergence(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.trace(self.gradient(t, x), axis1=-2, axis2=-1)

    def vorticity(self) -> "VectorField":
        return CurlField(self)


def curl_from_gradient(J: np.ndarray) -> np.ndarray:
    return np.stack(
        [J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]],
        axis=-1,
    )


class CurlField(VectorField):
    """``curl`` of another field; gradient by central differences."""

    def __init__(self, base: VectorField):
        self.base = base

    def value(self, t, x):
        return self.base.curl(t, x)


class CallableField(VectorField):
    """Wraps plain functions ``value_fn(t, x)`` and optional ``gradient_fn``."""

    def __init__(self, value_fn: Callable, gradient_fn: Callable | None = None,
                 components: int = 3, sup_bound=None, grad_bound=None):
        self._value = value_fn
        self._gradient = gradient_fn
        self.components = components
        self.sup_bound = sup_bound
        self.grad_bound = grad_bound

    def value(self, t, x):
        return np.asarray(self._value(t, np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, t, x):
        if self._gradient is None:
            return super().gradient(t, x)
        return np.asarray(self._gradient(t, np.asarray(x, dtype=float)), dtype=float)


class ZeroField(VectorField):
    sup_bound = 0.0
    grad_bound = 0.0

    def __init__(self, components: int = 3):
        self.components = components

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.components,))

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.components, 3))

    def vorticity(self):
        return ZeroField(3)


class LinearField(VectorField):
    """Affine field ``v(x) = A x + c``, time independent."""

    def __init__(self, A, c=None):
        self.A = np.asarray(A, dtype=float).reshape(3, 3)
        self.c = np.zeros(3) if c is None else np.asarray(c, dtype=float).reshape(3)
        self.grad_bound = float(np.linalg.norm(self.A, 2))
        self.sup_bound = float(np.linalg.norm(self.c)) if not self.A.any() else None

    def value(self, t, x):
        return np.asarray(x, dtype=float) @ self.A.T + self.c

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + (3, 3)).copy()


def solenoidal_shear(gamma: float) -> LinearField:
    """Steady shear ``u = (gamma * x2, 0, 0)``; divergence free."""
    A = np.zeros((3, 3))
    A[0, 1] = gamma
    return LinearField(A)


class GaussianBump(VectorField):
    """``amplitude * exp(-|x - center|^2 / (2 width^2))`` (vector valued)."""

    def __init__(self, amplitude=1.0, width: float = 1.0, center=(0.0, 0.0, 0.0)):
        amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
        self.amplitude = amp
        self.components = amp.size
        self.width = float(width)
        self.center = np.asarray(center, dtype=float)
        self.sup_bound = float(np.linalg.norm(amp))
        self.grad_bound = self.sup_bound * math.exp(-0.5) / self.width

    def _g(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return d, np.exp(-0.5 * np.sum(d * d, axis=-1) / self.width**2)

    def value(self, t, x):
        _, g = self._g(x)
        return g[..., None] * self.amplitude

    def gradient(self, t, x):
        d, g = self._g(x)
        dg = -(d / self.width**2) * g[..., None]
        return self.amplitude[:, None] * dg[..., None, :]


class _Gaussian:
    """``amp * exp(-|x|^2 / (2 s^2))`` and its first three derivative tensors."""

    def __init__(self, amp: float, s: float, center):
        self.amp, self.s, self.center = amp, s, np.asarray(center, dtype=float)

    def derivs(self, x, order: int):
        y = np.asarray(x, dtype=float) - self.center
        s2 = self.s**2
        g = self.amp * np.exp(-0.5 * np.sum(y * y, axis=-1) / s2)
        out = [g]
        I = np.eye(3)
        if order >= 1:
            out.append(-(y / s2) * g[..., None])
        if order >= 2:
            yy = y[..., :, None] * y[..., None, :]
            out.append((yy / s2**2 - I / s2) * g[..., None, None])
        if order >= 3:
            yyy = y[..., :, None, None] * y[..., None, :, None] * y[..., None, None, :]
            sym = (np.einsum("ij,...k->...ijk", I, y) + np.einsum("ik,...j->...ijk", I, y)
                   + np.einsum("jk,...i->...ijk", I, y))
            out.append((-yyy / s2**3 + sym / s2**2) * g[..., None, None, None])
        return out


class GaussianVortexBlob(VectorField):
    """Velocity ``u = curl(G e3)`` of a Gaussian stream function ``G``.

    ``u`` is divergence free and decays at infinity, so it is exactly the
    Biot-Savart velocity of its vorticity ``curl u``; both are available in
    closed form.
    """

    def __init__(self, scale: float = 0.5, amplitude: float = 1.0, center=(0.0, 0.0, 0.0)):
        self.scale = float(scale)
        self.amplitude = float(amplitude)
        self._G = _Gaussian(self.amplitude, self.scale, center)
        # |grad G| peaks at e^{-1/2} A / s.
        self.sup_bound = self.amplitude * math.exp(-0.5) / self.scale
        self.grad_bound = 2.0 * self.amplitude / self.scale**2

    def value(self, t, x):
        _, dG = self._G.derivs(x, 1)
        return np.stack([dG[..., 1], -dG[..., 0], np.zeros_like(dG[..., 0])], axis=-1)

    def gradient(self, t, x):
        _, _, H = self._G.derivs(x, 2)
        return np.stack([H[..., 1, :], -H[..., 0, :], np.zeros_like(H[..., 0, :])], axis=-2)

    def curl(self, t, x):
        _, _, H = self._G.derivs(x, 2)
        return np.stack([H[..., 0, 2], H[..., 1, 2], -(H[..., 0, 0] + H[..., 1, 1])], axis=-1)

    def vorticity(self) -> VectorField:
        return _BlobVorticity(self)


class _BlobVorticity(VectorField):
    def __init__(self, blob: GaussianVortexBlob):
        self.blob = blob
        self.sup_bound = 3.0 * blob.amplitude / blob.scale**2

    def value(self, t, x):
        return self.blob.curl(t, x)

    def gradient(self, t, x):
        T3 = self.blob._G.derivs(x, 3)[3]
        return np.stack([T3[..., 0, 2, :], T3[..., 1, 2, :], -(T3[..., 0, 0, :] + T3[..., 1, 1, :])],
                        axis=-2)


class LambOseenSlice(VectorField):
    """Lamb-Oseen vortex along the x3 axis, started ``t0`` after the point vortex.

    Velocity ``u = Gamma / (2 pi r^2) (1 - exp(-r^2 / (4 nu (t + t0)))) (-x2, x1, 0)``,
    vorticity ``(0, 0, Gamma / (4 pi nu (t + t0)) exp(-r^2 / (4 nu (t + t0))))``.
    Planar, so the stretching term vanishes and the vorticity solves the heat
    equation.
    """

    def __init__(self, circulation: float = 1.0, nu: float = 0.1, t0: float = 1.0):
        if nu <= 0 or t0 <= 0:
            raise ValueError("nu and t0 must be positive")
        self.circulation, self.nu, self.t0 = float(circulation), float(nu), float(t0)
        c = 4 * self.nu * self.t0
        self.grad_bound = abs(self.circulation) / (math.pi * c)

    def _c(self, t):
        return 4.0 * self.nu * (t + self.t0)

    def _F(self, q, c):
        """F(q) with u = F(r^2) (-x2, x1, 0), and F'(q); series near q = 0."""
        G = self.circulation / (2 * math.pi)
        small = q < 1e-6 * c
        qs = np.where(small, c, q)
        F = np.where(small, G / c * (1 - q / (2 * c)), -G * np.expm1(-qs / c) / qs)
        Fp = np.where(
            small,
            G * (-1 / (2 * c**2) + q / (3 * c**3)),
            G * (np.expm1(-qs / c) / qs**2 + np.exp(-qs / c) / (c * qs)),
        )
        return F, Fp

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        q = x[..., 0] ** 2 + x[..., 1] ** 2
        F, _ = self._F(q, self._c(t))
        return np.stack([-F * x[..., 1], F * x[..., 0], np.zeros_like(q)], axis=-1)

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        q = x[..., 0] ** 2 + x[..., 1] ** 2
        F, Fp = self._F(q, self._c(t))
        J = np.zeros(x.shape[:-1] + (3, 3))
        v = np.stack([-x[..., 1], x[..., 0]], axis=-1)
        for i in range(2):
            for j in range(2):
                J[..., i, j] = 2 * Fp * x[..., j] * v[..., i]
        J[..., 0, 1] -= F
        J[..., 1, 0] += F
        return J

    def vorticity_value(self, t, x):
        x = np.asarray(x, dtype=float)
        c = self._c(t)
        q = x[..., 0] ** 2 + x[..., 1] ** 2
        return self.circulation / (math.pi * c) * np.exp(-q / c)

    def curl(self, t, x):
        w = self.vorticity_value(t, x)
        z = np.zeros_like(w)
        return np.stack([z, z, w], axis=-1)

    def vorticity(self):
        lo = self

        class _LOVorticity(VectorField):
            sup_bound = abs(lo.circulation) / (math.pi * lo._c(0.0))

            def value(self, t, x):
                return lo.curl(t, x)

            def gradient(self, t, x):
                x = np.asarray(x, dtype=float)
                w = lo.vorticity_value(t, x)
                c = lo._c(t)
                J = np.zeros(x.shape[:-1] + (3, 3))
                J[..., 2, 0] = -2 * x[..., 0] / c * w
                J[..., 2, 1] = -2 * x[..., 1] / c * w
                return J

        return _LOVorticity()


class TimeShifted(VectorField):
    """``v(t + shift, x)``."""

    def __init__(self, base: VectorField, shift: float):
        self.base, self.shift = base, float(shift)
        self.components = base.components
        self.sup_bound, self.grad_bound = base.sup_bound, base.grad_bound

    def value(self, t, x):
        return self.base.value(t + self.shift, x)

    def gradient(self, t, x):
        return self.base.gradient(t + self.shift, x)


class Scaled(VectorField):
    """``a * v``."""

    def __init__(self, base: VectorField, a: float):
        self.base, self.a = base, float(a)
        self.components = base.components
        self.sup_bound = None if base.sup_bound is None else abs(a) * base.sup_bound
        self.grad_bound = None if base.grad_bound is None else abs(a) * base.grad_bound

    def value(self, t, x):
        return self.a * self.base.value(t, x)

    def gradient(self, t, x):
        return self.a * self.base.gradient(t, x)


_REGISTRY = {
    "zero": lambda components=3: ZeroField(components),
    "solenoidal_shear": lambda gamma=1.0: solenoidal_shear(gamma),
    "lamb_oseen_slice": lambda circulation=1.0, nu=0.1, t0=1.0: LambOseenSlice(circulation, nu, t0),
    "gaussian_vortex_blob": lambda scale=0.5, amplitude=1.0, center=(0.0, 0.0, 0.0):
        GaussianVortexBlob(scale, amplitude, center),
    "gaussian_bump": lambda amplitude=(1.0, 0.0, 0.0), width=1.0, center=(0.0, 0.0, 0.0):
        GaussianBump(amplitude, width, center),
    "linear": lambda A, c=None: LinearField(A, c),
    "constant": lambda c: LinearField(np.zeros((3, 3)), c),
}

ANALYTIC_FIELDS = tuple(sorted(_REGISTRY))


def analytic_field(name: str, **params) -> VectorField:
    """Closed-form field by name (see ``ANALYTIC_FIELDS``)."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown analytic field {name!r}; known: {', '.join(ANALYTIC_FIELDS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# Grid-backed fields


class GridField(VectorField):
    """Node values on the uniform box ``[-R, R]^3`` with spacing ``h``.

    Space is interpolated trilinearly, time linearly between slices (and held
    constant outside the slice range).  Outside the box the field is either
    zero (``outside="zero"``) or the value at the nearest box point
    (``outside="clamp"``).  Gradients are centred differences at the nodes,
    interpolated the same way.
    """

    def __init__(self, R: float, h: float, times, values, outside: str = "zero"):
        values = np.asarray(values, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if R <= 0 or h <= 0:
            raise ValueError("R and h must be positive")
        n = int(round(2 * R / h)) + 1
        if abs((n - 1) * h - 2 * R) > 1e-9 * R:
            raise ValueError(f"2R = {2 * R} is not a multiple of h = {h}")
        if values.ndim == 4:
            values = values[..., None]
        if values.shape[:4] != (times.size, n, n, n):
            raise ValueError(f"values shape {values.shape} does not match grid ({times.size}, {n}, {n}, {n}, c)")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("time slices must be strictly increasing")
        if outside not in ("zero", "clamp"):
            raise ValueError("outside must be 'zero' or 'clamp'")
        self.R, self.h, self.n = float(R), float(h), n
        self.times = times
        self.values = values
        self.outside = outside
        self.components = values.shape[-1]
        self._node_grad = None

    @property
    def axis(self) -> np.ndarray:
        return -self.R + self.h * np.arange(self.n)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(n, n, n, 3)``."""
        a = self.axis
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)

    def _time_weights(self, t):
        ts = self.times
        if ts.size == 1 or t <= ts[0]:
            return 0, 0, 0.0
        if t >= ts[-1]:
            return ts.size - 1, ts.size - 1, 0.0
        k1 = int(np.searchsorted(ts, t, side="right"))
        k0 = k1 - 1
        return k0, k1, (t - ts[k0]) / (ts[k1] - ts[k0])

    def _interp(self, arr, t, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        pts = x.reshape(-1, 3)
        C = arr.shape[-1]
        flat = arr.reshape(arr.shape[0], -1, C)
        k0, k1, wt = self._time_weights(t)
        slab = flat[k0] if wt == 0.0 else (1.0 - wt) * flat[k0] + wt * flat[k1]
        out = np.empty((pts.shape[0], C))
        for lo in range(0, pts.shape[0], _CHUNK):
            out[lo:lo + _CHUNK] = self._interp_chunk(slab, pts[lo:lo + _CHUNK])
        return out.reshape(lead + (C,))

    def _interp_chunk(self, flat, p):
        n = self.n
        u = (p + self.R) / self.h
        if self.outside == "zero":
            tol = 1e-12 * n
            inside = np.all((u >= -tol) & (u <= n - 1 + tol), axis=1)
            if not inside.all():
                out = np.zeros((p.shape[0], flat.shape[-1]))
                sel = np.flatnonzero(inside)
                if sel.size:
                    out[sel] = self._corners(flat, u[sel])
                return out
        return self._corners(flat, u)

    def _corners(self, flat, u):
        n = self.n
        u = np.clip(u, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.intp), n - 2)
        w = u - i0
        base = (i0[:, 0] * n + i0[:, 1]) * n + i0[:, 2]
        idx = base[:, None] + self._offsets[None, :]
        wx = np.stack([1.0 - w[:, 0], w[:, 0]], axis=1)
        wy = np.stack([1.0 - w[:, 1], w[:, 1]], axis=1)
        wz = np.stack([1.0 - w[:, 2], w[:, 2]], axis=1)
        W8 = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]).reshape(-1, 8)
        return np.einsum("pk,pkc->pc", W8, flat[idx])

    @property
    def _offsets(self):
        n = self.n
        return np.array([(dx * n + dy) * n + dz for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])

    def value(self, t, x):
        return self._interp(self.values, t, x)

    def node_gradient(self) -> np.ndarray:
        """Centred-difference gradient at the nodes, shape ``(n_t, n, n, n, c, 3)``."""
        if self._node_grad is None:
            g = np.gradient(self.values, self.h, axis=(1, 2, 3), edge_order=2)
            self._node_grad = np.stack(g, axis=-1)
        return self._node_grad

    def gradient(self, t, x):
        G = self.node_gradient()
        C = self.components
        out = self._interp(G.reshape(G.shape[:4] + (C * 3,)), t, x)
        return out.reshape(out.shape[:-1] + (C, 3))

    def slice(self, k: int) -> "GridField":
        return GridField(self.R, self.h, self.times[k:k + 1], self.values[k:k + 1], self.outside)

    # --- serialization -----------------------------------------------------

    def _header(self) -> dict:
        return {
            "R": self.R.hex(),
            "h": self.h.hex(),
            "n": self.n,
            "times": [float(t).hex() for t in self.times],
            "components": self.components,
            "outside": self.outside,
        }

    def save(self, path) -> None:
        """Write a bit-exact dump; ``.csv`` gives a text node dump, anything else binary."""
        path = Path(path)
        if path.suffix == ".csv":
            _save_csv(self, path)
            return
        header = json.dumps(self._header()).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GridField":
        path = Path(path)
        if path.suffix == ".csv":
            return _load_csv(path)
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ValueError(f"{path}: not a grid field dump")
            size = int.from_bytes(fh.read(8), "little")
            hd = json.loads(fh.read(size))
            data = np.frombuffer(fh.read(), dtype="<f8")
        n, times = hd["n"], [float.fromhex(t) for t in hd["times"]]
        values = data.reshape(len(times), n, n, n, hd["components"]).astype(float)
        return cls(float.fromhex(hd["R"]), float.fromhex(hd["h"]), times, values, hd["outside"])


_MAGIC = b"PROBNS-GRIDFIELD-1\n"


def _save_csv(f: GridField, path: Path) -> None:
    hd = f._header()
    with open(path, "w") as fh:
        for k, v in hd.items():
            fh.write(f"# {k}: {json.dumps(v)}\n")
        cols = ",".join(f"v{c}" for c in range(f.components))
        fh.write(f"k,i,j,l,{cols}\n")
        n = f.n
        for k in range(f.times.size):
            block = f.values[k].reshape(-1, f.components)
            for idx, row in enumerate(block):
                i, rem = divmod(idx, n * n)
                j, l = divmod(rem, n)
                fh.write(f"{k},{i},{j},{l}," + ",".join(repr(float(v)) for v in row) + "\n")


def _load_csv(path: Path) -> GridField:
    hd = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                hd[key.strip()] = json.loads(val)
            elif line[0].isdigit():
                rows.append(line.rstrip("\n").split(","))
    n, times, C = hd["n"], [float.fromhex(t) for t in hd["times"]], hd["components"]
    values = np.empty((len(times), n, n, n, C))
    for r in rows:
        k, i, j, l = (int(v) for v in r[:4])
        values[k, i, j, l] = [float(v) for v in r[4:]]
    return GridField(float.fromhex(hd["R"]), float.fromhex(hd["h"]), times, values, hd["outside"])


def build_grid_field(source, R: float, h: float, times=(0.0,), outside: str = "zero") -> GridField:
    """Sample ``source`` on the box grid.

    ``source`` is a :class:`VectorField`, a callable ``(t, x) -> values`` or
    an array already laid out as ``(n_t, n, n, n, c)``.
    """
    if R <= 0 or h <= 0:
        raise ValueError("R and h must be positive")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if isinstance(source, np.ndarray):
        return GridField(R, h, times, source, outside)
    fn = source.value if isinstance(source, VectorField) else source
    n = int(round(2 * R / h)) + 1
    a = -R + h * np.arange(n)
    X = np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)
    slices = [np.asarray(fn(float(t), X), dtype=float) for t in times]
    vals = np.stack(slices)
    if not np.all(np.isfinite(vals)):
        raise ValueError("source produced non-finite values")
    return GridField(R, h, times, vals, outside)


# ---------------------------------------------------------------------------
# Norm estimators


@dataclass
class NormReport:
    """Grid estimates of the norms used for velocity and vorticity fields.

    ``combined`` is ``||.||_p + ||.||_{C^alpha_b}`` with
    ``||.||_{C^alpha_b} = sup + [.]_alpha``.  ``c1alpha`` is
    ``sup + sum_j sup|d_j v| + sum_j [d_j v]_alpha``.
    """

    alpha: float
    p: float
    sup_norm: float
    hoelder_seminorm: float
    lp_norm: float
    lp_trusted: bool
    truncation_radius: float
    gradient_sup: float = 0.0
    gradient_opnorm: float = 0.0
    gradient_hoelder: float = 0.0

    @property
    def c_alpha(self) -> float:
        return self.sup_norm + self.hoelder_seminorm

    @property
    def combined(self) -> float:
        return self.lp_norm + self.c_alpha

    @property
    def c1alpha(self) -> float:
        return self.sup_norm + self.gradient_sup + self.gradient_hoelder


def _pairs(R, h, n_pairs, seed):
    """Point pairs at dyadic separations h, 2h, ... <= 2R, all inside the box."""
    seps = []
    d = h
    while d <= 2 * R * (1 + 1e-12):
        seps.append(d)
        d *= 2
    seps = np.asarray(seps)
    u = np.random.default_rng(seed).random((n_pairs, 5))
    sep = seps[np.arange(n_pairs) % seps.size]
    x = -R + 2 * R * u[:, :3]
    cos_t = 2 * u[:, 3] - 1
    sin_t = np.sqrt(1 - cos_t**2)
    phi = 2 * np.pi * u[:, 4]
    direction = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
    y = x + sep[:, None] * direction
    out = np.any(np.abs(y) > R, axis=1)
    y[out] = x[out] - sep[out, None] * direction[out]
    ok = np.all(np.abs(y) <= R, axis=1)
    return x[ok], y[ok], sep[ok]


def _hoelder(field, t, x, y, sep, alpha, grad=False):
    if grad:
        fx, fy = field.gradient(t, x), field.gradient(t, y)
        # sum over derivative directions j of sup |d_j f(x) - d_j f(y)| / |x-y|^a
        diff = np.linalg.norm(fx - fy, axis=-2)
        return float(np.sum(np.max(diff / sep[:, None] ** alpha, axis=0))) if len(sep) else 0.0
    diff = np.linalg.norm(field.value(t, x) - field.value(t, y), axis=-1)
    return float(np.max(diff / sep**alpha)) if len(sep) else 0.0


def estimate_norms(field: VectorField, alpha: float, p: float, R: float, h: float,
                   n_pairs: int = 4096, t: float = 0.0, seed: int = 0,
                   gradient: bool = False, decay_rtol: float = 1e-3) -> NormReport:
    """Estimate sup, Hoelder, and truncated L^p norms of ``field(t, .)`` on ``[-R, R]^3``.

    Sup-type norms are maxima over grid nodes (or sampled pairs), so they
    are lower bounds of the true norms.  The L^p norm uses midpoint
    quadrature on the box and is flagged untrusted when the field has not
    decayed to ``decay_rtol * sup`` on the box boundary.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if p < 1.0:
        raise ValueError("p must be >= 1")
    n = int(round(2 * R / h)) + 1
    a = -R + h * np.arange(n)
    X = np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)
    mag = np.linalg.norm(field.value(t, X), axis=-1)
    sup = float(mag.max())
    edge = np.any(np.abs(X) >= R - 1e-12 * R, axis=1)
    boundary = float(mag[edge].max())
    trusted = not (boundary > decay_rtol * sup)

    c = -R + h * (np.arange(n - 1) + 0.5)
    Xc = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    lp = float((np.sum(np.linalg.norm(field.value(t, Xc), axis=-1) ** p) * h**3) ** (1.0 / p))

    x, y, sep = _pairs(R, h, n_pairs, seed)
    report = NormReport(alpha, p, sup, _hoelder(field, t, x, y, sep, alpha), lp, trusted, R)
    if gradient:
        J = field.gradient(t, X)
        report.gradient_sup = float(np.sum(np.max(np.linalg.norm(J, axis=-2), axis=0)))
        report.gradient_opnorm = float(np.max(np.linalg.norm(J, ord=2, axis=(-2, -1))))
        report.gradient_hoelder = _hoelder(field, t, x, y, sep, alpha, grad=True)
    return report
