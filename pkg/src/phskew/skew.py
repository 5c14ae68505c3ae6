"""Skew products over linear Anosov bases, with closed-form leaf geometry."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .errors import (
    ConstructionFailed,
    NotAnosov,
    NotOnLeaf,
    OutOfLocalChart,
    RadiusTooLarge,
    SigmaTooLarge,
)
from .grassmann import GrassmannPoint, orthonormalize
from .primitives import FiberMap, torus_diff
from .spectral import ToralAutomorphism, check_anosov, spectral_summary

CHART_RADIUS = 0.25
LEAF_TOL = 1e-9


def _batch(a, width=None):
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if width is not None and a.shape[1] != width:
        raise ValueError(f"expected {width} coordinates, got {a.shape[1]}")
    return a, single


# ------------------------------------------------------------ base geometry

@dataclass(frozen=True, eq=False)
class LeafGeometry:
    """Invariant splitting of a hyperbolic toral automorphism.

    ``Es``/``Eu`` are orthonormal frames and ``Ms``/``Mu`` the restrictions of
    the matrix to them (A Es = Es Ms exactly up to round-off).
    """

    f: ToralAutomorphism
    Es: np.ndarray
    Eu: np.ndarray

    @cached_property
    def A(self):
        return self.f.matrix

    @cached_property
    def Ms(self):
        return self.Es.T @ self.A @ self.Es

    @cached_property
    def Mu(self):
        return self.Eu.T @ self.A @ self.Eu

    @cached_property
    def Ms_inv(self):
        return np.linalg.inv(self.Ms)

    @cached_property
    def Mu_inv(self):
        return np.linalg.inv(self.Mu)

    @cached_property
    def _basis_inv(self):
        return np.linalg.inv(np.hstack([self.Es, self.Eu]))

    def decompose(self, v):
        """Coordinates (cs, cu) with v = Es cs + Eu cu, for batches of v."""
        c = np.atleast_2d(v) @ self._basis_inv.T
        k = self.Es.shape[1]
        return c[:, :k], c[:, k:]

    @cached_property
    def angle(self) -> float:
        """Smallest angle between E^s and E^u."""
        from .grassmann import principal_angle
        return principal_angle(GrassmannPoint(self.Es), GrassmannPoint(self.Eu))


_GEOM_CACHE: dict = {}


def base_splitting(f: ToralAutomorphism):
    """(E^s, E^u) as orthonormal frames, via ordered real Schur forms."""
    g = leaf_geometry(f)
    return GrassmannPoint(g.Es), GrassmannPoint(g.Eu)


def leaf_geometry(f: ToralAutomorphism) -> LeafGeometry:
    key = f.entries
    if key in _GEOM_CACHE:
        return _GEOM_CACHE[key]
    if not check_anosov(f):
        raise NotAnosov("base has eigenvalues of modulus one")
    A = f.matrix
    s = spectral_summary(f)
    ks = s.b
    _, Zs, sdim_s = scipy.linalg.schur(A, output="real", sort="iuc")
    _, Zu, sdim_u = scipy.linalg.schur(A, output="real", sort="ouc")
    if sdim_s != ks or sdim_u != f.dim - ks:
        raise NotAnosov("could not separate the stable and unstable spectra")
    Es = orthonormalize(Zs[:, :ks]).frame
    Eu = orthonormalize(Zu[:, :f.dim - ks]).frame
    g = LeafGeometry(f, np.array(Es), np.array(Eu))
    _GEOM_CACHE[key] = g
    return g


def bracket(f: ToralAutomorphism, x, y, z):
    """[y, z]: the point of W^s_loc(y) and W^u_loc(z), for y on W^u(x), z on W^s(x)."""
    g = leaf_geometry(f)
    x, single = _batch(x, f.dim)
    y, _ = _batch(y, f.dim)
    z, _ = _batch(z, f.dim)
    for nm, p in (("y", y), ("z", z)):
        if np.any(np.abs(torus_diff(p, x)) > CHART_RADIUS):
            raise OutOfLocalChart(f"{nm} is more than {CHART_RADIUS} from x")
    d = torus_diff(y, z)
    _, cu = g.decompose(d)
    w = np.mod(z + cu @ g.Eu.T, 1.0)
    return w[0] if single else w


def leaf_offsets(f: ToralAutomorphism, y1, y2, kind: str):
    """Leaf coordinates of y2 - y1 along E^u ('u') or E^s ('s').

    Raises NotOnLeaf when the transverse component exceeds LEAF_TOL.
    """
    g = leaf_geometry(f)
    d = torus_diff(np.atleast_2d(y2), np.atleast_2d(y1))
    if np.any(np.abs(d) > CHART_RADIUS):
        raise OutOfLocalChart("leaf pair further apart than the chart radius")
    cs, cu = g.decompose(d)
    along, across = (cu, cs) if kind == "u" else (cs, cu)
    if across.size and np.max(np.abs(across)) > LEAF_TOL:
        raise NotOnLeaf(f"transverse offset {np.max(np.abs(across)):.3e} on a {kind}-leaf pair")
    return along


# ------------------------------------------------------------- skew product

@dataclass(frozen=True, eq=False)
class SkewProduct:
    """F(y, z) = (f(y), g(y, z)) with g a composition of fiber primitives."""

    base: ToralAutomorphism
    fiber: FiberMap
    volume_preserving: bool = True

    def __post_init__(self):
        if self.volume_preserving and not self.fiber.volume_preserving:
            raise ValueError("declared volume preserving but a primitive is not")

    @property
    def m(self) -> int:
        return self.base.dim

    @property
    def c(self) -> int:
        return self.fiber.dim

    @cached_property
    def base_inverse(self) -> ToralAutomorphism:
        return self.base.inverse()

    @cached_property
    def geometry(self) -> LeafGeometry:
        return leaf_geometry(self.base)

    def f(self, y):
        return np.mod(y @ self.base.matrix.T, 1.0)

    def f_inv(self, y):
        return np.mod(y @ self.base_inverse.matrix.T, 1.0)

    def g(self, y, z, fy=None):
        """Fiber map in lift coordinates; fy = f(y) is computed when needed."""
        if fy is None and self.fiber.uses_image:
            fy = self.f(y)
        return self.fiber.apply(y, z, fy)

    def g_inv(self, y, z, fy=None):
        if fy is None and self.fiber.uses_image:
            fy = self.f(y)
        return self.fiber.inverse(y, z, fy)

    def fiber_jac(self, y, z, fy=None):
        if fy is None and self.fiber.uses_image:
            fy = self.f(y)
        return self.fiber.tangent_jac(y, z, fy)

    def with_fiber(self, fiber: FiberMap, volume_preserving=None) -> "SkewProduct":
        vp = self.volume_preserving if volume_preserving is None else volume_preserving
        return SkewProduct(self.base, fiber, vp and fiber.volume_preserving)


def evaluate(F: SkewProduct, y, z):
    y, single = _batch(y, F.m)
    z, _ = _batch(z, F.fiber.ambient_dim)
    fy = F.f(y)
    w = F.fiber.reduce(F.g(y, z, fy))
    return (fy[0], w[0]) if single else (fy, w)


def evaluate_inverse(F: SkewProduct, y, z):
    y1, single = _batch(y, F.m)
    z1, _ = _batch(z, F.fiber.ambient_dim)
    y0 = F.f_inv(y1)
    w = F.fiber.reduce(F.g_inv(y0, z1, y1))
    return (y0[0], w[0]) if single else (y0, w)


def iterate(F: SkewProduct, y, z, n: int):
    step = evaluate if n >= 0 else evaluate_inverse
    for _ in range(abs(n)):
        y, z = step(F, y, z)
    return y, z


def derivative_cocycle(F: SkewProduct, y, z, n: int):
    """Product of fiber Jacobians along the orbit segment of length n.

    Jacobians are exact for linear/translation/shear primitives and the exact
    derivative of the discrete RK4 map for flows.  Negative n uses the
    inverse branch.
    """
    y, single = _batch(y, F.m)
    z, _ = _batch(z, F.fiber.ambient_dim)
    c = F.c
    P = np.broadcast_to(np.eye(c), (y.shape[0], c, c)).copy()
    if n >= 0:
        for _ in range(n):
            fy = F.f(y)
            P = F.fiber_jac(y, z, fy) @ P
            z = F.fiber.reduce(F.g(y, z, fy))
            y = fy
    else:
        for _ in range(-n):
            y0 = F.f_inv(y)
            z0 = F.fiber.reduce(F.g_inv(y0, z, y))
            P = np.linalg.inv(F.fiber_jac(y0, z0, y)) @ P
            y, z = y0, z0
    return P[0] if single else P


# -------------------------------------------------------- recurrence time

@dataclass(frozen=True)
class Recurrence:
    n: int
    exceeded: bool


def _box_frame(M, r):
    # ellipsoid M B(0, r) lies inside the parallelepiped with edges U_j * r s_j
    U, s, _ = np.linalg.svd(M)
    return U * (r * s)


def _may_intersect(a, Pa, b, Pb) -> bool:
    """Could {a + Pa w} and {b + Pb w'} (|w|,|w'|_inf <= 1) intersect?"""
    d = b - a
    m = d.size
    # separating-axis test on the face normals of both boxes
    for P in (Pa, Pb):
        normals = np.linalg.inv(P).T if np.linalg.matrix_rank(P) == m else P
        for nu in normals.T:
            nu = nu / np.linalg.norm(nu)
            ha = np.sum(np.abs(nu @ Pa))
            hb = np.sum(np.abs(nu @ Pb))
            if abs(nu @ d) > ha + hb:
                return False
    if m == 2:
        return True          # face normals are exhaustive for parallelograms
    res = linprog(np.zeros(2 * m), A_eq=np.hstack([Pa, -Pb]), b_eq=d,
                  bounds=[(-1, 1)] * (2 * m), method="highs")
    return res.status == 0


def recurrence_time(F, Q_center, Q_radius: float, n_max: int = 10**6) -> Recurrence:
    """First n with F^n(Q) meeting Q, Q the cylinder over a base ball.

    The test f^{n1}(Q) vs f^{-n2}(Q), n1 + n2 = n, uses exact rational orbits
    of the centre and parallelepiped outer bounds of the image ellipsoids, so
    the returned n never exceeds the true first return time.
    """
    f = F.base if isinstance(F, SkewProduct) else F
    if not 0 < Q_radius < CHART_RADIUS:
        raise RadiusTooLarge(f"radius {Q_radius} must lie in (0, {CHART_RADIUS})")
    m = f.dim
    A = [list(r) for r in f.entries]
    Ainv = [list(r) for r in f.inverse().entries]
    fr = [Fraction(float(v)) for v in np.mod(np.asarray(Q_center, float), 1.0)]
    D = 1
    for v in fr:
        D = max(D, v.denominator)
    num0 = [int(v * D) for v in fr]

    def step(mat, num):
        return [sum(mat[i][j] * num[j] for j in range(m)) % D for i in range(m)]

    fwd = [num0]
    bwd = [num0]
    Af = [np.eye(m)]
    Ab = [np.eye(m)]
    Am = f.matrix
    Aim = np.asarray(Ainv, float)
    for n in range(1, n_max + 1):
        n1 = (n + 1) // 2
        n2 = n - n1
        while len(fwd) <= n1:
            fwd.append(step(A, fwd[-1]))
            Af.append(Am @ Af[-1])
        while len(bwd) <= n2:
            bwd.append(step(Ainv, bwd[-1]))
            Ab.append(Aim @ Ab[-1])
        a = np.array([Fraction(v, D) for v in fwd[n1]], dtype=float)
        b = np.array([Fraction(v, D) for v in bwd[n2]], dtype=float)
        Pa = _box_frame(Af[n1], Q_radius)
        Pb = _box_frame(Ab[n2], Q_radius)
        ha = np.sum(np.abs(Pa), axis=1)
        hb = np.sum(np.abs(Pb), axis=1)
        lo = np.floor(a - b - ha - hb - 1e-12).astype(int)
        hi = np.ceil(a - b + ha + hb + 1e-12).astype(int)
        ranges = [range(l, h + 1) for l, h in zip(lo, hi)]
        for k in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(m, -1).T:
            if _may_intersect(a, Pa, b + k, Pb):
                return Recurrence(n, False)
    return Recurrence(n_max, True)


def is_nonperiodic(f: ToralAutomorphism, y, horizon: int = 10**4, sep: float = 1e-9) -> bool:
    """Numerical check that y does not return within sep for `horizon` iterates."""
    A = f.matrix
    y0 = np.mod(np.asarray(y, float), 1.0)
    p = y0.copy()
    for _ in range(horizon):
        p = np.mod(A @ p, 1.0)
        if np.max(np.abs(torus_diff(p, y0))) < sep:
            return False
    return True


def periodic_point(f: ToralAutomorphism, p: int, search: int = 3) -> np.ndarray:
    """A point of exact period p: y = (A^p - I)^{-1} k mod 1 for a small integer k."""
    import itertools
    if p < 1:
        raise ValueError("period must be positive")
    m = f.dim
    M = f.power(p).matrix - np.eye(m, dtype=np.int64)
    D = int(round(np.linalg.det(M)))
    if D == 0:
        raise ValueError("A^p - I is singular")
    adj = np.round(np.linalg.inv(M) * D).astype(np.int64)
    rng = range(-search, search + 1)
    for k in sorted(itertools.product(rng, repeat=m), key=lambda v: (sum(map(abs, v)), v)):
        if not any(k):
            continue
        num = (adj @ np.array(k, dtype=np.int64)) % abs(D)
        # exact period check on integer numerators mod |D|
        A = np.array(f.matrix, dtype=np.int64)
        q = num.copy()
        for j in range(1, p + 1):
            q = (A @ q) % abs(D)
            if np.array_equal(q, num):
                break
        if j == p and np.array_equal(q, num):
            return num / abs(D)
    raise ConstructionFailed(f"no point of exact period {p} found")


# -------------------------------------------------------------- su-loops

@dataclass(frozen=True, eq=False)
class SuLoop:
    """Base points of a 4-legged loop y -u-> y1 -s-> y2 -u-> y3 -s-> y."""

    y: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray

    def legs(self):
        return [("u", self.y, self.y1), ("s", self.y1, self.y2),
                ("u", self.y2, self.y3), ("s", self.y3, self.y)]

    def validate(self, f: ToralAutomorphism) -> None:
        for kind, a, b in self.legs():
            leaf_offsets(f, a, b, kind)

    def points(self):
        return np.vstack([self.y, self.y1, self.y2, self.y3])


def degenerate_loop(y) -> SuLoop:
    y = np.asarray(y, float)
    return SuLoop(y, y.copy(), y.copy(), y.copy())


@dataclass(frozen=True, eq=False)
class LoopFamily:
    f: ToralAutomorphism
    y: np.ndarray
    sigma: float
    C0: float
    C1: float
    e_u: np.ndarray
    e_s: np.ndarray

    @property
    def t_max(self) -> float:
        return self.sigma / self.C0

    @property
    def z(self) -> np.ndarray:
        return np.mod(self.y + 0.75 * self.sigma * self.e_s, 1.0)

    def psi(self, t):
        return np.mod(self.y + t * self.e_u, 1.0)

    def loop(self, t: float) -> SuLoop:
        y1 = self.psi(t)
        y2 = np.mod(self.y + t * self.e_u + 0.75 * self.sigma * self.e_s, 1.0)
        return SuLoop(self.y.copy(), y1, y2, self.z)

    def param(self, i: int, s: float, c: int) -> float:
        """t = (sigma / (6 c C0)) (6 i - 2 + s), i = 1..c, s in [-1, 2]."""
        return self.t_max / (6.0 * c) * (6 * i - 2 + s)


def _dist_to_segment(p, a, d, tmax):
    # distance from p to {a + tau d : 0 <= tau <= tmax}, |d| = 1
    tau = np.clip((p - a) @ d, 0.0, tmax)
    return np.linalg.norm(p - a - tau[:, None] * d if p.ndim == 2 else p - a - tau * d, axis=-1)


def build_loop_family(f: ToralAutomorphism, y, sigma: float, n_check: int = 100) -> LoopFamily:
    g = leaf_geometry(f)
    y = np.mod(np.asarray(y, float), 1.0)
    e_u = g.Eu[:, 0].copy()
    e_s = g.Es[:, 0].copy()
    sin_us = float(np.sqrt(max(0.0, 1.0 - (e_u @ e_s) ** 2)))
    C0 = max(1.0, 2.0 / sin_us)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if sigma * (1.0 / C0 + 0.75) >= CHART_RADIUS:
        raise SigmaTooLarge(f"sigma={sigma} leaves the local chart")
    fam = LoopFamily(f, y, float(sigma), C0, 0.0, e_u, e_s)
    # verify the two separation properties on sample parameters, in the lift
    ts = np.linspace(0.0, fam.t_max, n_check)
    br = ts[:, None] * e_u + 0.75 * sigma * e_s            # [psi(t), z] - y
    dist = _dist_to_segment(br, np.zeros_like(e_u), e_u, fam.t_max)
    if not np.all(dist > sigma / C0):
        raise SigmaTooLarge("loop family separation property failed")
    # C1: all four legs stay within C1 sigma of y (legs are straight segments)
    corners = np.vstack([np.zeros_like(e_u), fam.t_max * e_u,
                         fam.t_max * e_u + 0.75 * sigma * e_s, 0.75 * sigma * e_s])
    C1 = float(np.max(np.linalg.norm(corners, axis=1)) / sigma)
    return LoopFamily(f, y, float(sigma), C0, C1, e_u, e_s)


def skew_rates(F: SkewProduct):
    """Rates from the base spectrum and Lipschitz bounds of the fiber maps.

    The centre rates are sup-norm bounds (log Lip(g^{-1}), log Lip(g)), so the
    resulting rates are certified, if pessimistic, for nonlinear fibers.
    """
    from .spectral import HyperbolicRates, _base_rates

    chi_s, chi_u = _base_rates(spectral_summary(F.base))
    lo = -math.log(F.fiber.inverted().lip_z())
    hi = math.log(F.fiber.lip_z())
    return HyperbolicRates(chi_bar_s=chi_s, chi_bar_u=chi_u, chi_bar_c=lo, chi_hat_c=hi)
