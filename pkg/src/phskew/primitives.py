"""Invertible fiber primitives and their compositions.

Torus fibers are handled in lift coordinates (R^c); callers reduce mod 1.
Sphere fibers S^c are unit vectors in R^{c+1}.  Every primitive acts on a
batch: base points ``y`` of shape (B, m) and fiber points ``z`` of shape
(B, n).  Profiles give the smooth base dependence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
RK4_STEPS = 64


def torus_diff(a, b):
    """Nearest-representative difference a - b on the torus."""
    d = np.asarray(a, float) - np.asarray(b, float)
    return d - np.round(d)


# --------------------------------------------------------------- profiles

def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep5_d(t):
    t = np.clip(t, 0.0, 1.0)
    return 30.0 * t * t * (t - 1.0) ** 2


class Profile:
    lip = 0.0
    sup = 1.0

    def __call__(self, y):
        raise NotImplementedError

    def grad(self, y):
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Profile):
    value: float = 1.0

    def __call__(self, y, batch=None):
        n = batch if y is None else np.asarray(y).shape[0]
        return np.full(n if n is not None else 1, float(self.value))

    def grad(self, y):
        return np.zeros_like(np.asarray(y, float))

    @property
    def lip(self):
        return 0.0

    @property
    def sup(self):
        return abs(self.value)

    def spec(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Bump(Profile):
    """Radial quintic-smoothstep bump on the base torus, compact support."""

    center: tuple
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not 0 < self.radius < 0.5:
            raise ValueError("bump radius must lie in (0, 0.5)")

    def _r(self, y):
        d = torus_diff(y, np.asarray(self.center))
        return d, np.sqrt(np.sum(d * d, axis=-1))

    def __call__(self, y, batch=None):
        _, r = self._r(y)
        return self.amplitude * smoothstep5(1.0 - r / self.radius)

    def grad(self, y):
        d, r = self._r(y)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(r[:, None] > 0, d / r[:, None], 0.0)
        s = smoothstep5_d(1.0 - r / self.radius)
        return (-self.amplitude / self.radius) * s[:, None] * u

    @property
    def lip(self):
        return abs(self.amplitude) * 1.875 / self.radius

    @property
    def sup(self):
        return abs(self.amplitude)

    def support_contains(self, y) -> np.ndarray:
        _, r = self._r(np.atleast_2d(y))
        return r < self.radius

    def spec(self):
        return {"kind": "bump", "center": list(self.center), "radius": self.radius,
                "amplitude": self.amplitude}


@dataclass(frozen=True)
class Fourier(Profile):
    """amplitude * sin(2 pi <k, y> + phase), smooth and periodic on the base."""

    k: tuple
    amplitude: float = 1.0
    phase: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))

    def __call__(self, y, batch=None):
        arg = TWO_PI * (np.asarray(y, float) @ np.asarray(self.k, float)) + self.phase
        return self.offset + self.amplitude * np.sin(arg)

    def grad(self, y):
        k = np.asarray(self.k, float)
        arg = TWO_PI * (np.asarray(y, float) @ k) + self.phase
        return (self.amplitude * TWO_PI * np.cos(arg))[:, None] * k

    @property
    def lip(self):
        return abs(self.amplitude) * TWO_PI * float(np.linalg.norm(self.k))

    @property
    def sup(self):
        return abs(self.offset) + abs(self.amplitude)

    def spec(self):
        return {"kind": "fourier", "k": list(self.k), "amplitude": self.amplitude,
                "phase": self.phase, "offset": self.offset}


def _prof(p, y, batch):
    if y is None:
        if not isinstance(p, Constant):
            raise ValueError("base-dependent profile needs a base point")
        return np.full(batch, float(p.value))
    return p(y)


# ------------------------------------------------------------ vector fields

class VectorField:
    """Fiber vector field X(y, z), possibly base dependent."""

    divergence_free = True
    manifold = "torus"

    def value(self, y, z):
        raise NotImplementedError

    def jac(self, y, z):
        raise NotImplementedError

    lip_z = 0.0
    lip_y = 0.0
    sup = 0.0

    def active(self, y, n):
        """Rows whose field is not identically zero over the fiber."""
        return np.ones(n, bool)

    def freeze(self, y, n):
        """Field with the base point fixed; base factors evaluated once."""
        return _Frozen(self, y)


class _Frozen:
    def __init__(self, vf, y):
        self.vf, self.y = vf, y

    def value(self, z):
        return self.vf.value(self.y, z)

    def jac(self, z):
        return self.vf.jac(self.y, z)


class _FrozenScaled:
    def __init__(self, r, inner):
        self.r, self.inner = r, inner

    def value(self, z):
        return self.r[:, None] * self.inner.value(z)

    def jac(self, z):
        return self.r[:, None, None] * self.inner.jac(z)


class _FrozenSum:
    def __init__(self, terms):
        self.terms = terms

    def value(self, z):
        out = np.zeros_like(z)
        for t in self.terms:
            out += t.value(z)
        return out

    def jac(self, z):
        n = z.shape[1]
        out = np.zeros((z.shape[0], n, n))
        for t in self.terms:
            out += t.jac(z)
        return out


@dataclass(frozen=True)
class ConstantField(VectorField):
    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(a) for a in self.v))

    def value(self, y, z):
        return np.broadcast_to(np.asarray(self.v), z.shape).copy()

    def jac(self, y, z):
        n = z.shape[1]
        return np.zeros((z.shape[0], n, n))

    @property
    def sup(self):
        return float(np.linalg.norm(self.v))

    def spec(self):
        return {"kind": "constant", "v": list(self.v)}


@dataclass(frozen=True)
class TrigField(VectorField):
    """w * sin(2 pi <k, z> + phase) with w orthogonal to k: divergence free."""

    w: tuple
    k: tuple
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(a) for a in self.w))
        object.__setattr__(self, "k", tuple(int(a) for a in self.k))
        if abs(float(np.dot(self.w, self.k))) > 1e-14:
            raise ValueError("w must be orthogonal to k")

    def value(self, y, z):
        arg = TWO_PI * (z @ np.asarray(self.k, float)) + self.phase
        return np.sin(arg)[:, None] * np.asarray(self.w)

    def jac(self, y, z):
        k = np.asarray(self.k, float)
        arg = TWO_PI * (z @ k) + self.phase
        return (TWO_PI * np.cos(arg))[:, None, None] * np.outer(self.w, k)[None]

    @property
    def lip_z(self):
        return TWO_PI * float(np.linalg.norm(self.w) * np.linalg.norm(self.k))

    @property
    def sup(self):
        return float(np.linalg.norm(self.w))

    def spec(self):
        return {"kind": "trig", "w": list(self.w), "k": list(self.k), "phase": self.phase}


@dataclass(frozen=True)
class RotationField(VectorField):
    """Infinitesimal rotation z -> G z on the sphere, G skew-symmetric."""

    G: tuple
    manifold = "sphere"

    def __post_init__(self):
        g = np.asarray(self.G, float)
        if np.max(np.abs(g + g.T)) > 1e-14:
            raise ValueError("generator must be skew-symmetric")
        object.__setattr__(self, "G", tuple(map(tuple, g.tolist())))

    def value(self, y, z):
        return z @ np.asarray(self.G).T

    def jac(self, y, z):
        g = np.asarray(self.G)
        return np.broadcast_to(g, (z.shape[0],) + g.shape).copy()

    @property
    def lip_z(self):
        return float(np.linalg.norm(np.asarray(self.G), 2))

    @property
    def sup(self):
        return self.lip_z

    def spec(self):
        return {"kind": "rotation", "G": [list(r) for r in self.G]}


@dataclass(frozen=True)
class ProfiledField(VectorField):
    """coef * rho(y) * X(z)."""

    profile: Profile
    field: VectorField
    coef: float = 1.0

    @property
    def manifold(self):
        return self.field.manifold

    def value(self, y, z):
        r = _prof(self.profile, y, z.shape[0])
        return (self.coef * r)[:, None] * self.field.value(y, z)

    def jac(self, y, z):
        r = _prof(self.profile, y, z.shape[0])
        return (self.coef * r)[:, None, None] * self.field.jac(y, z)

    def _scale(self, y, n):
        return np.broadcast_to(self.coef * _prof(self.profile, y, n), (n,))

    def active(self, y, n):
        return (self._scale(y, n) != 0.0) & self.field.active(y, n)

    def freeze(self, y, n):
        return _FrozenScaled(np.array(self._scale(y, n)), self.field.freeze(y, n))

    @property
    def lip_z(self):
        return abs(self.coef) * self.profile.sup * self.field.lip_z

    @property
    def lip_y(self):
        return abs(self.coef) * self.profile.lip * self.field.sup

    @property
    def sup(self):
        return abs(self.coef) * self.profile.sup * self.field.sup


@dataclass(frozen=True)
class SumField(VectorField):
    terms: tuple

    @property
    def manifold(self):
        return self.terms[0].manifold if self.terms else "torus"

    def value(self, y, z):
        out = np.zeros_like(z)
        for t in self.terms:
            out += t.value(y, z)
        return out

    def jac(self, y, z):
        n = z.shape[1]
        out = np.zeros((z.shape[0], n, n))
        for t in self.terms:
            out += t.jac(y, z)
        return out

    def active(self, y, n):
        out = np.zeros(n, bool)
        for t in self.terms:
            out |= t.active(y, n)
        return out

    def freeze(self, y, n):
        return _FrozenSum([t.freeze(y, n) for t in self.terms if np.any(t.active(y, n))])

    @property
    def lip_z(self):
        return sum(t.lip_z for t in self.terms)

    @property
    def lip_y(self):
        return sum(t.lip_y for t in self.terms)

    @property
    def sup(self):
        return sum(t.sup for t in self.terms)


# --------------------------------------------------------------- primitives

class Primitive:
    """Base class.  Subclasses implement apply/inverse/jac on batches."""

    manifold = "torus"     # torus | sphere | euclidean | any
    volume_preserving = True
    at_image = False       # evaluate the profile at f(y) instead of y

    def apply(self, y, z):
        raise NotImplementedError

    def inverse(self, y, z):
        raise NotImplementedError

    def jac(self, y, z):
        raise NotImplementedError

    def lip_z(self) -> float:
        raise NotImplementedError

    def lip_y(self) -> float:
        return 0.0

    def lip_z_inv(self) -> float:
        """Lipschitz bound of the inverse in z (same as forward unless overridden)."""
        return self.lip_z()

    def numba_op(self):
        """(opcode, int params, float params) for the fast orbit kernel, or None."""
        return None

    def spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearToral(Primitive):
    """z -> M z with M integer unimodular (or any invertible matrix on R^c)."""

    M: tuple
    euclidean: bool = False

    def __post_init__(self):
        m = np.asarray(self.M, float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        if not self.euclidean:
            if not np.all(m == np.round(m)) or abs(round(np.linalg.det(m))) != 1:
                raise ValueError("torus map needs an integer matrix with det +-1")
        object.__setattr__(self, "M", tuple(map(tuple, m.tolist())))
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_minv", np.linalg.inv(m) if self.euclidean
                           else np.round(np.linalg.inv(m)))

    @property
    def manifold(self):
        return "euclidean" if self.euclidean else "torus"

    @property
    def volume_preserving(self):
        return abs(abs(np.linalg.det(self._m)) - 1.0) < 1e-12

    def apply(self, y, z):
        return z @ self._m.T

    def inverse(self, y, z):
        return z @ self._minv.T

    def jac(self, y, z):
        return np.broadcast_to(self._m, (z.shape[0],) + self._m.shape).copy()

    def lip_z(self):
        return float(np.linalg.norm(self._m, 2))

    def lip_z_inv(self):
        return float(np.linalg.norm(self._minv, 2))

    def numba_op(self):
        return (0, np.zeros(0, np.int64), self._m.ravel().copy())

    def spec(self):
        return {"kind": "linear", "matrix": [list(r) for r in self.M],
                "euclidean": self.euclidean}


@dataclass(frozen=True)
class Translation(Primitive):
    """z -> z + rho(y) v."""

    v: tuple
    profile: Profile = Constant(1.0)
    at_image: bool = False

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(a) for a in self.v))

    manifold = "any_flat"

    def apply(self, y, z):
        r = _prof(self.profile, y, z.shape[0])
        return z + r[:, None] * np.asarray(self.v)

    def inverse(self, y, z):
        r = _prof(self.profile, y, z.shape[0])
        return z - r[:, None] * np.asarray(self.v)

    def jac(self, y, z):
        n = z.shape[1]
        return np.broadcast_to(np.eye(n), (z.shape[0], n, n)).copy()

    def lip_z(self):
        return 1.0

    def lip_y(self):
        return self.profile.lip * float(np.linalg.norm(self.v))

    def numba_op(self):
        if not isinstance(self.profile, Constant):
            return None
        return (1, np.zeros(0, np.int64), np.asarray(self.v) * self.profile.value)

    def spec(self):
        return {"kind": "translation", "v": list(self.v), "profile": self.profile.spec(),
                "at_image": self.at_image}


@dataclass(frozen=True)
class Shear(Primitive):
    """z_i -> z_i + s rho(y) h(z_j), i != j.

    ``periodic=True`` uses h(t) = sin(2 pi t)/(2 pi), which is well defined on
    the torus; otherwise h(t) = t (a linear shear, euclidean or integer s).
    """

    axis: int
    source: int
    s: float
    profile: Profile = Constant(1.0)
    periodic: bool = True
    at_image: bool = False

    def __post_init__(self):
        if self.axis == self.source:
            raise ValueError("shear axis and source must differ")

    manifold = "any_flat"

    def _h(self, t):
        return np.sin(TWO_PI * t) / TWO_PI if self.periodic else t

    def _dh(self, t):
        return np.cos(TWO_PI * t) if self.periodic else np.ones_like(t)

    def _amp(self, y, z):
        return self.s * _prof(self.profile, y, z.shape[0])

    def apply(self, y, z):
        out = z.copy()
        out[:, self.axis] += self._amp(y, z) * self._h(z[:, self.source])
        return out

    def inverse(self, y, z):
        out = z.copy()
        out[:, self.axis] -= self._amp(y, z) * self._h(z[:, self.source])
        return out

    def jac(self, y, z):
        n = z.shape[1]
        j = np.broadcast_to(np.eye(n), (z.shape[0], n, n)).copy()
        j[:, self.axis, self.source] = self._amp(y, z) * self._dh(z[:, self.source])
        return j

    def lip_z(self):
        a = abs(self.s) * self.profile.sup
        return 1.0 + a

    def lip_y(self):
        hmax = 1.0 / TWO_PI if self.periodic else 1.0
        return abs(self.s) * self.profile.lip * hmax

    def numba_op(self):
        if not isinstance(self.profile, Constant):
            return None
        return (2, np.array([self.axis, self.source, int(self.periodic)], np.int64),
                np.array([self.s * self.profile.value]))

    def spec(self):
        return {"kind": "shear", "axis": self.axis, "source": self.source, "s": self.s,
                "profile": self.profile.spec(), "periodic": self.periodic,
                "at_image": self.at_image}


def _rk4(field, y, z, t, steps, with_jac=False):
    h = t / steps
    n = z.shape[1]
    J = np.broadcast_to(np.eye(n), (z.shape[0], n, n)).copy() if with_jac else None
    fz = field.freeze(y, z.shape[0])
    for _ in range(steps):
        k1 = fz.value(z)
        z2 = z + 0.5 * h * k1
        k2 = fz.value(z2)
        z3 = z + 0.5 * h * k2
        k3 = fz.value(z3)
        z4 = z + h * k3
        k4 = fz.value(z4)
        if with_jac:
            # tangent-linear RK4: the exact derivative of the discrete map
            A1 = fz.jac(z)
            A2 = fz.jac(z2)
            A3 = fz.jac(z3)
            A4 = fz.jac(z4)
            L1 = A1 @ J
            L2 = A2 @ (J + 0.5 * h * L1)
            L3 = A3 @ (J + 0.5 * h * L2)
            L4 = A4 @ (J + h * L3)
            J = J + (h / 6.0) * (L1 + 2 * L2 + 2 * L3 + L4)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z, J


@dataclass(frozen=True)
class FieldFlow(Primitive):
    """Time-t flow of a fiber vector field, fixed-step RK4 (64 steps per unit time).

    The inverse solves the forward discrete map by Newton, so the pair
    apply/inverse is consistent to round-off.
    """

    field: VectorField
    t: float = 1.0
    at_image: bool = False
    steps: int = RK4_STEPS

    @property
    def manifold(self):
        return self.field.manifold

    @property
    def volume_preserving(self):
        return bool(self.field.divergence_free)

    def _n_steps(self):
        return max(1, int(math.ceil(self.steps * abs(self.t))))

    def _rows(self, y, z):
        # rows where the field vanishes on the whole fiber are left untouched
        if y is not None:
            y = np.broadcast_to(np.atleast_2d(y), (z.shape[0], np.atleast_2d(y).shape[1]))
        mask = self.field.active(y, z.shape[0])
        if y is not None:
            y = y[mask]
        return y, mask

    def apply(self, y, z):
        y, mask = self._rows(y, z)
        out = z.copy()
        if not mask.any():
            return out
        w, _ = _rk4(self.field, y, z[mask], self.t, self._n_steps())
        if self.field.manifold == "sphere":
            w = w / np.linalg.norm(w, axis=1, keepdims=True)
        out[mask] = w
        return out

    def jac(self, y, z):
        y, mask = self._rows(y, z)
        n = z.shape[1]
        J = np.broadcast_to(np.eye(n), (z.shape[0], n, n)).copy()
        if mask.any():
            _, J[mask] = _rk4(self.field, y, z[mask], self.t, self._n_steps(), with_jac=True)
        return J

    def inverse(self, y, z):
        y, mask = self._rows(y, z)
        out = z.copy()
        if mask.any():
            out[mask] = self._inverse(y, z[mask])
        return out

    def _inverse(self, y, z):
        x, _ = _rk4(self.field, y, z, -self.t, self._n_steps())
        for _ in range(8):
            fx, J = _rk4(self.field, y, x, self.t, self._n_steps(), with_jac=True)
            r = fx - z
            if np.max(np.abs(r), initial=0.0) < 1e-15:
                break
            x = x - np.linalg.solve(J, r[..., None])[..., 0]
        if self.field.manifold == "sphere":
            x = x / np.linalg.norm(x, axis=1, keepdims=True)
        return x

    def rk4_error_estimate(self, y, z) -> float:
        """Step-doubling estimate of the integration error per unit time."""
        n = self._n_steps()
        a, _ = _rk4(self.field, y, z, self.t, n)
        b, _ = _rk4(self.field, y, z, self.t, 2 * n)
        return float(np.max(np.abs(a - b), initial=0.0)) * 16.0 / 15.0 / max(abs(self.t), 1e-300)

    def lip_z(self):
        return math.exp(self.field.lip_z * abs(self.t))

    def lip_y(self):
        L = self.field.lip_z * abs(self.t)
        grow = (math.expm1(L) / L) if L > 0 else 1.0
        return self.field.lip_y * abs(self.t) * grow

    def numba_op(self):
        f = self.field
        coef = 1.0
        if isinstance(f, ProfiledField) and isinstance(f.profile, Constant):
            coef = f.coef * f.profile.value
            f = f.field
        if isinstance(f, TrigField):
            # w is orthogonal to k, so the flow is the exact shear along w
            fl = np.concatenate([np.asarray(f.w) * coef * self.t, np.asarray(f.k, float),
                                 [f.phase]])
            return (3, np.zeros(0, np.int64), fl)
        if isinstance(f, ConstantField):
            return (1, np.zeros(0, np.int64), np.asarray(f.v) * coef * self.t)
        return None

    def spec(self):
        return {"kind": "flow", "t": self.t, "field": _field_spec(self.field),
                "at_image": self.at_image}


def _field_spec(f):
    if isinstance(f, ProfiledField):
        return {"kind": "profiled", "profile": f.profile.spec(), "coef": f.coef,
                "field": _field_spec(f.field)}
    if isinstance(f, SumField):
        return {"kind": "sum", "terms": [_field_spec(t) for t in f.terms]}
    return f.spec()


@dataclass(frozen=True)
class SphereRotation(Primitive):
    R: tuple
    manifold = "sphere"

    def __post_init__(self):
        r = np.asarray(self.R, float)
        if np.max(np.abs(r.T @ r - np.eye(r.shape[0]))) > 1e-12:
            raise ValueError("rotation matrix must be orthogonal")
        object.__setattr__(self, "R", tuple(map(tuple, r.tolist())))
        object.__setattr__(self, "_r", r)

    def apply(self, y, z):
        return z @ self._r.T

    def inverse(self, y, z):
        return z @ self._r

    def jac(self, y, z):
        return np.broadcast_to(self._r, (z.shape[0],) + self._r.shape).copy()

    def lip_z(self):
        return 1.0

    def numba_op(self):
        return (4, np.zeros(0, np.int64), self._r.ravel().copy())

    def spec(self):
        return {"kind": "sphere_rotation", "R": [list(r) for r in self.R]}


@dataclass(frozen=True)
class SphereTwist(Primitive):
    """Rotate in the (u, v) plane by amp * <a, z>; a, u, v orthonormal.

    The height <a, z> is preserved and each level set is rotated rigidly,
    so the map preserves the round volume.
    """

    a: tuple
    u: tuple
    v: tuple
    amp: float
    manifold = "sphere"

    def __post_init__(self):
        fr = np.column_stack([self.a, self.u, self.v]).astype(float)
        if np.max(np.abs(fr.T @ fr - np.eye(3))) > 1e-12:
            raise ValueError("a, u, v must be orthonormal")
        for nm in ("a", "u", "v"):
            object.__setattr__(self, nm, tuple(float(x) for x in getattr(self, nm)))

    def _rot(self, z, sign):
        a, u, v = (np.asarray(t) for t in (self.a, self.u, self.v))
        ang = sign * self.amp * (z @ a)
        cu, cv = z @ u, z @ v
        c, s = np.cos(ang), np.sin(ang)
        nu = c * cu - s * cv
        nv = s * cu + c * cv
        return z + (nu - cu)[:, None] * u + (nv - cv)[:, None] * v

    def apply(self, y, z):
        return self._rot(z, 1.0)

    def inverse(self, y, z):
        return self._rot(z, -1.0)

    def jac(self, y, z):
        a, u, v = (np.asarray(t) for t in (self.a, self.u, self.v))
        n = z.shape[1]
        ang = self.amp * (z @ a)
        c, s = np.cos(ang), np.sin(ang)
        P = np.outer(u, u) + np.outer(v, v)
        W = np.outer(v, u) - np.outer(u, v)        # rotation generator in the plane
        # z' = (I - P) z + (c P + s W) z
        J = np.eye(n)[None] - P[None] + c[:, None, None] * P + s[:, None, None] * W
        dz = (-s[:, None] * (z @ P.T) + c[:, None] * (z @ W.T))   # d z'/d ang
        J += self.amp * dz[:, :, None] * a[None, None, :]
        return J

    def lip_z(self):
        return 1.0 + abs(self.amp)

    def numba_op(self):
        return (5, np.zeros(0, np.int64),
                np.concatenate([self.a, self.u, self.v, [self.amp]]))

    def spec(self):
        return {"kind": "sphere_twist", "a": list(self.a), "u": list(self.u),
                "v": list(self.v), "amp": self.amp}


@dataclass(frozen=True)
class Inverted(Primitive):
    """Inverse of another primitive."""

    inner: Primitive

    @property
    def manifold(self):
        return self.inner.manifold

    @property
    def volume_preserving(self):
        return self.inner.volume_preserving

    @property
    def at_image(self):
        return self.inner.at_image

    def apply(self, y, z):
        return self.inner.inverse(y, z)

    def inverse(self, y, z):
        return self.inner.apply(y, z)

    def jac(self, y, z):
        x = self.inner.inverse(y, z)
        return np.linalg.inv(self.inner.jac(y, x))

    def lip_z(self):
        return self.inner.lip_z_inv()

    def lip_z_inv(self):
        return self.inner.lip_z()

    def lip_y(self):
        # d_y p^{-1} = -(d_z p)^{-1} d_y p
        return self.inner.lip_y() * self.inner.lip_z_inv()

    def numba_op(self):
        op = self.inner.numba_op()
        if op is None:
            return None
        code, ip, fp = op
        if code == 0:
            n = int(round(math.sqrt(fp.size)))
            return (0, ip, np.linalg.inv(fp.reshape(n, n)).ravel())
        if code == 1:
            return (1, ip, -fp)
        if code == 2:
            return (2, ip, -fp)
        if code == 3:
            m = (fp.size - 1) // 2
            g = fp.copy()
            g[:m] *= -1.0      # <k, z> is invariant, so negate the amplitude
            return (3, ip, g)
        if code == 4:
            n = int(round(math.sqrt(fp.size)))
            return (4, ip, fp.reshape(n, n).T.ravel().copy())
        if code == 5:
            g = fp.copy()
            g[-1] *= -1.0
            return (5, ip, g)
        return None

    def spec(self):
        return {"kind": "inverse", "of": self.inner.spec()}


# -------------------------------------------------------------- fiber maps

@dataclass(frozen=True)
class FiberMap:
    """Composition of primitives; primitives[0] is applied first."""

    primitives: tuple
    manifold: str = "torus"      # torus | sphere | euclidean
    dim: int = 2                 # c; sphere S^c lives in R^{c+1}

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.manifold not in ("torus", "sphere", "euclidean"):
            raise ValueError(f"unknown manifold {self.manifold!r}")
        for p in self.primitives:
            m = p.manifold
            if m == "any_flat":
                ok = self.manifold in ("torus", "euclidean")
                if self.manifold == "torus" and isinstance(p, Shear) and not p.periodic:
                    ok = float(p.s).is_integer() and isinstance(p.profile, Constant) \
                        and float(p.profile.value).is_integer()
            elif m == "euclidean":
                ok = self.manifold == "euclidean"
            elif m == "torus":
                ok = self.manifold in ("torus", "euclidean")
            else:
                ok = m == self.manifold
            if not ok:
                raise ValueError(f"{type(p).__name__} not valid on a {self.manifold} fiber")

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.manifold == "sphere" else self.dim

    @property
    def volume_preserving(self) -> bool:
        return all(p.volume_preserving for p in self.primitives)

    @property
    def uses_image(self) -> bool:
        return any(p.at_image for p in self.primitives)

    @property
    def base_dependent(self) -> bool:
        return self.lip_y() > 0

    def apply(self, y, z, fy=None):
        for p in self.primitives:
            z = p.apply(fy if p.at_image else y, z)
        return z

    def inverse(self, y, z, fy=None):
        for p in reversed(self.primitives):
            z = p.inverse(fy if p.at_image else y, z)
        return z

    def jac(self, y, z, fy=None):
        n = z.shape[1]
        J = np.broadcast_to(np.eye(n), (z.shape[0], n, n)).copy()
        for p in self.primitives:
            yy = fy if p.at_image else y
            J = p.jac(yy, z) @ J
            z = p.apply(yy, z)
        return J

    def lip_z(self) -> float:
        out = 1.0
        for p in self.primitives:
            out *= p.lip_z()
        return out

    def lip_y(self) -> float:
        # d_y(p_k o ... o p_1) <= sum_i Lip_y(p_i) prod_{j>i} Lip_z(p_j)
        total = 0.0
        for i, p in enumerate(self.primitives):
            tail = 1.0
            for q in self.primitives[i + 1:]:
                tail *= q.lip_z()
            total += p.lip_y() * tail
        return total

    def then(self, other: "FiberMap") -> "FiberMap":
        """self followed by other."""
        return FiberMap(self.primitives + other.primitives, self.manifold, self.dim)

    def inverted(self) -> "FiberMap":
        prims = []
        for p in reversed(self.primitives):
            prims.append(p.inner if isinstance(p, Inverted) else Inverted(p))
        return FiberMap(tuple(prims), self.manifold, self.dim)

    def power(self, k: int) -> "FiberMap":
        base = self if k >= 0 else self.inverted()
        return FiberMap(base.primitives * abs(k), self.manifold, self.dim)

    def reduce(self, z):
        if self.manifold == "torus":
            return np.mod(z, 1.0)
        if self.manifold == "sphere":
            return z / np.linalg.norm(z, axis=-1, keepdims=True)
        return z

    def diff(self, a, b):
        """Chart difference a - b (nearest representative on the torus)."""
        if self.manifold == "torus":
            return torus_diff(a, b)
        return np.asarray(a, float) - np.asarray(b, float)

    def tangent_frame(self, z) -> np.ndarray:
        """Orthonormal tangent frames (B, n, c): identity on flat fibers."""
        z = np.atleast_2d(z)
        if self.manifold != "sphere":
            return np.broadcast_to(np.eye(self.dim), (z.shape[0], self.dim, self.dim)).copy()
        out = np.empty((z.shape[0], self.dim + 1, self.dim))
        for i, p in enumerate(z):
            # Householder-free: SVD of the point gives its complement
            u, _, _ = np.linalg.svd(p[:, None], full_matrices=True)
            out[i] = u[:, 1:]
        return out

    def tangent_jac(self, y, z, fy=None):
        """Fiber derivative in intrinsic coordinates (B, c, c)."""
        J = self.jac(y, z, fy)
        if self.manifold != "sphere":
            return J
        T0 = self.tangent_frame(z)
        T1 = self.tangent_frame(self.apply(y, z, fy))
        return np.transpose(T1, (0, 2, 1)) @ J @ T0

    def spec(self) -> dict:
        return {"manifold": self.manifold, "dim": self.dim,
                "primitives": [p.spec() for p in self.primitives]}


def identity_map(dim=2, manifold="torus") -> FiberMap:
    return FiberMap((), manifold, dim)


def linear_map(M, euclidean=False) -> FiberMap:
    m = np.asarray(M, float)
    return FiberMap((LinearToral(tuple(map(tuple, m.tolist())), euclidean),),
                    "euclidean" if euclidean else "torus", m.shape[0])


def rotation2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])
