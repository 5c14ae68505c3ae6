"""Stable/unstable holonomies between fibers, su-loop holonomies and phi_F.

The holonomy is evaluated as a difference recursion: the fiber point is
pulled back along the orbit of y1, and the discrepancy between the fiber
maps over the two orbits is accumulated on the way out.  Orbit offsets
along the leaf are propagated with the restricted matrices, so they stay
accurate even after the base orbits themselves have lost all digits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NotOnLeaf, NotOnStableLeaf, NotOnUnstableLeaf
from .skew import LoopFamily, SkewProduct, SuLoop, leaf_offsets

DEFAULT_TOL = 1e-10
MAX_DEPTH = 200
CHECK_GAP = 5


@dataclass
class HolonomyResult:
    z: np.ndarray
    depth: int
    error: np.ndarray      # per-sample a-posteriori estimate

    @property
    def max_error(self) -> float:
        return float(np.max(self.error, initial=0.0))


def _prep(F: SkewProduct, y1, y2, z):
    y1 = np.atleast_2d(np.asarray(y1, float))
    y2 = np.atleast_2d(np.asarray(y2, float))
    z = np.atleast_2d(np.asarray(z, float))
    B = max(len(y1), len(y2), len(z))
    y1 = np.broadcast_to(y1, (B, y1.shape[1])).copy()
    y2 = np.broadcast_to(y2, (B, y2.shape[1])).copy()
    z = np.broadcast_to(z, (B, z.shape[1])).copy()
    return y1, y2, z


def _offsets(F, y1, y2, kind):
    try:
        return leaf_offsets(F.base, y1, y2, kind)
    except NotOnLeaf as exc:
        cls = NotOnUnstableLeaf if kind == "u" else NotOnStableLeaf
        raise cls(str(exc)) from exc


def _leaf_step(F, kind):
    g = F.geometry
    if kind == "u":
        return g.Eu, g.Mu_inv     # backward iterates contract E^u
    return g.Es, g.Ms


def _at_depth(F: SkewProduct, y1, coef, z, n: int, kind: str):
    """Holonomy truncated at depth n; coef = leaf coordinates of y2 - y1."""
    fib = F.fiber
    if n == 0:
        return z.copy()
    frame, M = _leaf_step(F, kind)
    # base pseudo-orbit of y1 and exact leaf offsets of the partner orbit
    p = [y1]
    off = [coef @ frame.T]
    c = coef
    stepper = F.f_inv if kind == "u" else F.f
    for _ in range(n):
        p.append(stepper(p[-1]))
        c = c @ M.T
        off.append(c @ frame.T)
    q = [p[k] + off[k] for k in range(n + 1)]

    if kind == "u":
        # w_k = g(p_k)^{-1} w_{k-1},  g(p_k): N_{p_k} -> N_{p_{k-1}}
        w = [z]
        for k in range(1, n + 1):
            w.append(fib.reduce(fib.inverse(p[k], w[-1], p[k - 1])))
        delta = np.zeros_like(z)
        for k in range(n, 0, -1):
            a = fib.apply(q[k], w[k] + delta, q[k - 1])
            b = fib.apply(p[k], w[k], p[k - 1])
            delta = a - b
    else:
        # w_k = g(p_{k-1}) w_{k-1}, then pull back over the partner orbit
        w = [z]
        for k in range(1, n + 1):
            w.append(fib.reduce(fib.apply(p[k - 1], w[-1], p[k])))
        delta = np.zeros_like(z)
        for k in range(n, 0, -1):
            a = fib.inverse(q[k - 1], w[k] + delta, q[k])
            b = fib.inverse(p[k - 1], w[k], p[k])
            delta = a - b
    return z + delta


def _chart_err(F, a, b):
    d = F.fiber.diff(a, b)
    return np.max(np.abs(d), axis=1)


def _holonomy(F: SkewProduct, y1, y2, z, tol, kind, depth=None, max_depth=MAX_DEPTH):
    y1, y2, z = _prep(F, y1, y2, z)
    coef = _offsets(F, y1, y2, kind)
    if depth is not None:
        h = _at_depth(F, y1, coef, z, depth, kind)
        return HolonomyResult(F.fiber.reduce(h), depth, np.zeros(len(z)))
    frame, M = _leaf_step(F, kind)
    Ly = F.fiber.lip_y()
    # a priori candidate: the base separation times Lip_y drops below tol
    n = 0
    dist = np.max(np.linalg.norm(coef, axis=1), initial=0.0)
    if Ly > 0 and dist > 0:
        c = coef
        while n < max_depth and Ly * dist >= tol:
            c = c @ M.T
            dist = np.max(np.linalg.norm(c, axis=1))
            n += 1
    else:
        n = 0
    while True:
        h0 = _at_depth(F, y1, coef, z, n, kind)
        h1 = _at_depth(F, y1, coef, z, n + CHECK_GAP, kind)
        err = _chart_err(F, h0, h1)
        if np.all(err < tol):
            return HolonomyResult(F.fiber.reduce(h1), n + CHECK_GAP, err)
        n += CHECK_GAP
        if n + CHECK_GAP > max_depth:
            raise NoConvergence(
                f"{kind}-holonomy error {np.max(err):.3e} >= tol {tol:.1e} at depth cap {max_depth}")


def unstable_holonomy(F: SkewProduct, y1, y2, z, tol: float = DEFAULT_TOL, depth=None,
                      max_depth: int = MAX_DEPTH) -> HolonomyResult:
    """H^u from the fiber over y1 to the fiber over y2 (y2 on W^u_loc(y1))."""
    return _holonomy(F, y1, y2, z, tol, "u", depth, max_depth)


def stable_holonomy(F: SkewProduct, y1, y2, z, tol: float = DEFAULT_TOL, depth=None,
                    max_depth: int = MAX_DEPTH) -> HolonomyResult:
    """H^s from the fiber over y1 to the fiber over y2 (y2 on W^s_loc(y1))."""
    return _holonomy(F, y1, y2, z, tol, "s", depth, max_depth)


def _leg(F, kind, a, b, z, tol, depth):
    fn = unstable_holonomy if kind == "u" else stable_holonomy
    return fn(F, a, b, z, tol, depth=depth)


def loop_holonomy(F: SkewProduct, loop: SuLoop, z, tol: float = DEFAULT_TOL,
                  depths=None) -> HolonomyResult:
    """H^s_{C3,C} H^u_{C2,C3} H^s_{C1,C2} H^u_{C,C1} applied to z."""
    err = 0.0
    used = []
    x = z
    for i, (kind, a, b) in enumerate(loop.legs()):
        r = _leg(F, kind, a, b, x, tol / 4.0, None if depths is None else depths[i])
        x = r.z
        err = err + r.error
        used.append(r.depth)
    res = HolonomyResult(x, max(used), np.atleast_1d(err))
    res.leg_depths = used
    return res


def phi_map(F: SkewProduct, fam: LoopFamily, x0, s, tol: float = DEFAULT_TOL,
            hook=None) -> HolonomyResult:
    """phi_F(s) = H_{gamma_c} ... H_{gamma_1}(x0), gamma_i = gamma(param(i, s_i)).

    ``hook`` replaces the whole map by a user function s -> fiber point (used
    for synthetic checks of the covering criterion).
    """
    s = np.atleast_2d(np.asarray(s, float))
    c = s.shape[1]
    if hook is not None:
        return HolonomyResult(np.asarray(hook(s), float), 0, np.zeros(len(s)))
    x = np.broadcast_to(np.atleast_2d(np.asarray(x0, float)), (len(s), len(np.atleast_1d(x0)))).copy()
    err = np.zeros(len(s))
    depth = 0
    for i in range(1, c + 1):
        t = fam.param(i, s[:, i - 1], c)
        y = np.broadcast_to(fam.y, (len(s), fam.y.size))
        y1 = np.mod(y + t[:, None] * fam.e_u, 1.0)
        y2 = np.mod(y1 + 0.75 * fam.sigma * fam.e_s, 1.0)
        y3 = np.broadcast_to(fam.z, y.shape)
        r = loop_holonomy(F, SuLoop(y, y1, y2, y3), x, tol / c)
        x = r.z
        err = err + r.error
        depth = max(depth, r.depth)
    return HolonomyResult(x, depth, err)


def holonomy_jacobian(F: SkewProduct, map_kind: str, args, z, h: float = 1e-5,
                      tol: float = 1e-12) -> np.ndarray:
    """Central finite-difference Jacobian of a holonomy in the fiber chart.

    The depth found at the centre point is reused at every stencil point so
    the truncation is the same smooth map throughout.
    """
    z = np.asarray(z, float)
    fib = F.fiber

    def run(pts, depths=None):
        if map_kind == "u":
            r = unstable_holonomy(F, args[0], args[1], pts, tol, depth=depths)
        elif map_kind == "s":
            r = stable_holonomy(F, args[0], args[1], pts, tol, depth=depths)
        elif map_kind == "loop":
            r = loop_holonomy(F, args, pts, tol, depths=depths)
        else:
            raise ValueError(f"unknown map kind {map_kind!r}")
        return r

    centre = run(z[None])
    depths = getattr(centre, "leg_depths", centre.depth)
    c = fib.dim
    if fib.manifold == "sphere":
        T_in = fib.tangent_frame(z)[0]
        T_out = fib.tangent_frame(centre.z)[0]
        plus = np.array([z + h * T_in[:, j] for j in range(c)])
        minus = np.array([z - h * T_in[:, j] for j in range(c)])
        plus /= np.linalg.norm(plus, axis=1, keepdims=True)
        minus /= np.linalg.norm(minus, axis=1, keepdims=True)
        hp = run(plus, depths).z
        hm = run(minus, depths).z
        return T_out.T @ ((hp - hm) / (2 * h)).T
    E = np.eye(c)
    hp = run(z[None] + h * E, depths).z
    hm = run(z[None] - h * E, depths).z
    return (fib.diff(hp, hm) / (2 * h)).T


def truncation_profile(F: SkewProduct, y1, y2, z, kind: str, depths, reference_depth=None):
    """Chart distance between the depth-n truncation and a deep reference."""
    y1, y2, z = _prep(F, y1, y2, z)
    coef = _offsets(F, y1, y2, kind)
    ref_n = reference_depth or (max(depths) + 20)
    ref = _at_depth(F, y1, coef, z, ref_n, kind)
    out = []
    for n in depths:
        out.append(np.max(_chart_err(F, _at_depth(F, y1, coef, z, n, kind), ref)))
    return np.array(out)
