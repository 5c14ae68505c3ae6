"""Box coverings of the unit cube and the slice-separation stable-value check."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConstructionFailed, InconclusiveResolution

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def K_constants(c: int, theta: float):
    """K0 = ceil(c / (c - (c-1)/theta)) + 1 and K1 = c K0 + 1 (exact rationals)."""
    if c < 1:
        raise ValueError("c must be >= 1")
    th = Fraction(theta).limit_denominator(10**12)
    if not 0 < th <= 1:
        raise ValueError("theta must lie in (0, 1]")
    den = c - Fraction(c - 1) / th
    if den <= 0:
        raise ValueError(f"theta={theta} too small for c={c}: need theta > (c-1)/c")
    K0 = math.ceil(Fraction(c) / den) + 1
    return K0, c * K0 + 1


def default_eps(c: int) -> float:
    return 0.45 / math.sqrt(c)


@dataclass(frozen=True, eq=False)
class Covering:
    """Nested grid families on [0,1]^c.

    Per axis there is one grid o_i + m Z.  Family j (0 <= j <= K1) consists of
    products of grid intervals of length (2(K1 - j) + 1) m.  A point in grid
    cell k sits in the family-j interval [g_{k-K1+j}, g_{k+1+K1-j}], so the
    K1 + 1 boxes containing it are strictly nested, and their boundaries are
    pairwise disjoint.
    """

    c: int
    eps_light: float
    theta: float
    K0: int
    K1: int
    spacing: float
    offsets: np.ndarray

    @property
    def min_side(self) -> float:
        return self.spacing

    @property
    def max_side(self) -> float:
        return (2 * self.K1 + 1) * self.spacing

    @property
    def C_min(self) -> float:
        return 10.0 / self.min_side

    def _klim(self, i):
        o, m = self.offsets[i], self.spacing
        k_lo = math.floor((0.0 - o) / m) - self.K1
        k_hi = math.floor((1.0 - o) / m) + 1 + self.K1
        return k_lo, k_hi

    def boundary_values(self, i: int) -> np.ndarray:
        """The set B_i of corner coordinates used on axis i."""
        lo, hi = self._klim(i)
        return self.offsets[i] + self.spacing * np.arange(lo, hi + 1)

    def chain(self, x):
        """The K1+1 nested boxes around x, as arrays lo, hi of shape (K1+1, c)."""
        x = np.asarray(x, float)
        k = np.floor((x - self.offsets) / self.spacing)
        j = np.arange(self.K1 + 1)[:, None]
        lo = self.offsets + self.spacing * (k - (self.K1 - j))
        hi = self.offsets + self.spacing * (k + 1 + (self.K1 - j))
        return lo, hi

    def n_boxes(self) -> int:
        total = 0
        for j in range(self.K1 + 1):
            L = 2 * (self.K1 - j) + 1
            per = 1
            for i in range(self.c):
                lo, hi = self._klim(i)
                per *= max(0, (hi - lo) - L + 1)
            total += per
        return total

    def iter_boxes(self):
        """Yield (family, lo, hi) for every box meeting [0,1]^c."""
        for j in range(self.K1 + 1):
            L = 2 * (self.K1 - j) + 1
            axes = []
            for i in range(self.c):
                lo, hi = self._klim(i)
                starts = [a for a in range(lo, hi - L + 1)]
                axes.append([(self.offsets[i] + self.spacing * a,
                              self.offsets[i] + self.spacing * (a + L)) for a in starts])
            for combo in itertools.product(*axes):
                yield j, np.array([p for p, _ in combo]), np.array([q for _, q in combo])

    def validate(self, probes) -> dict:
        """Check diameter, covering, disjoint boundaries and corner separation
        at the probe points; returns a summary."""
        probes = np.atleast_2d(probes)
        diam_ok = self.max_side * math.sqrt(self.c) < self.eps_light
        corners_ok = all(
            np.all(self.boundary_values(i) >= -1) and np.all(self.boundary_values(i) <= 2)
            for i in range(self.c))
        sep_ok = True
        for i in range(self.c):
            b = np.sort(self.boundary_values(i))
            gaps = np.diff(b)
            if gaps.size and gaps.min() < 10.0 / self.C_min * (1 - 1e-9):
                sep_ok = False
        cover_ok = True
        disjoint_ok = True
        for x in probes:
            lo, hi = self.chain(x)
            if not (np.all(lo <= x) and np.all(x <= hi)):
                cover_ok = False
            if lo.shape[0] < self.K1 + 1:
                cover_ok = False
            # strict nesting on every axis: all corner values along the chain differ
            for i in range(self.c):
                vals = np.concatenate([lo[:, i], hi[:, i]])
                if np.unique(vals).size != vals.size:
                    disjoint_ok = False
            if not (np.all(lo[1:] > lo[:-1]) and np.all(hi[1:] < hi[:-1])):
                disjoint_ok = False
        return {"diameter": diam_ok, "cover": cover_ok, "disjoint_boundaries": disjoint_ok,
                "separated_corners": sep_ok and corners_ok,
                "ok": diam_ok and cover_ok and disjoint_ok and sep_ok and corners_ok}


def probe_grid(c: int, n_points: int = 10**4) -> np.ndarray:
    per = max(2, int(round(n_points ** (1.0 / c))))
    ax = np.linspace(0.0, 1.0, per)
    return np.array(np.meshgrid(*([ax] * c), indexing="ij")).reshape(c, -1).T


def build_covering(c: int, eps_light: float | None = None, theta: float = 0.75,
                   K0: int | None = None, probes=None, max_candidates: int = 10**4) -> Covering:
    if eps_light is None:
        eps_light = default_eps(c)
    if eps_light <= 0:
        raise ValueError("eps_light must be positive")
    if K0 is None:
        K0, K1 = K_constants(c, theta)
    else:
        K1 = c * K0 + 1
    # cube diameter caps the useful lightness constant
    eps = min(eps_light, math.sqrt(c))
    m = 0.99 * eps / (math.sqrt(c) * (2 * K1 + 1))
    if probes is None:
        probes = probe_grid(c, 10**4)
    alphas = np.array([math.fmod((i + 1) * GOLDEN * math.sqrt(2.0 + i), 1.0) for i in range(c)])
    for j in range(1, max_candidates + 1):
        offs = np.mod(j * alphas, 1.0) * m
        # generic shift: no probe coordinate sits on a grid line
        r = np.mod(probes - offs, m)
        if np.min(np.minimum(r, m - r)) > 1e-9 * m:
            cov = Covering(c, float(eps_light), float(theta), K0, K1, m, offs)
            if cov.validate(probes[:: max(1, len(probes) // 500)])["ok"]:
                return cov
    raise ConstructionFailed(f"no admissible shift among {max_candidates} candidates")


# ----------------------------------------------------- stable value check

@dataclass
class StableValueReport:
    verdict: str                    # pass | fail | inconclusive
    delta: float
    holder_constant: float
    theta: float
    rows: list = field(default_factory=list)
    witness: dict | None = None
    subsets_checked: int = 0

    def raise_if_inconclusive(self):
        if self.verdict == "inconclusive":
            raise InconclusiveResolution(self.witness or "separation inside the uncertainty band")


def _slice_points(c, i, r, step):
    n = int(round(3.0 / step)) + 1
    ax = np.linspace(-1.0, 2.0, n)
    if c == 1:
        return np.array([[r]])
    grids = np.meshgrid(*([ax] * (c - 1)), indexing="ij")
    free = np.stack([g.ravel() for g in grids], axis=1)
    return np.insert(free, i, r, axis=1), [n] * (c - 1)


def stable_value_check(F, fam, x0, cov: Covering, grid_step: float, tol: float = 1e-10,
                       hook=None, theta: float | None = None, floor: float = 1e-9,
                       max_subsets: int = 10**6, periodic: bool | None = None,
                       workers: int = 1) -> StableValueReport:
    """Discrete form of the K0-slice criterion for phi_F.

    For each axis i and each K0-subset of B_i, the sampled images of the
    slices {s_i = r} must have empty common intersection.  With Lambda the
    measured Holder constant of phi_F on the slice grids, every point of a
    continuous slice image lies within rho = Lambda (grid_step sqrt(c-1)/2)^theta
    of a sample, so a common point forces sampled images within delta = 2 rho
    of one another.  Subsets whose separation exceeds delta are certified
    disjoint; separations below ``floor`` are genuine collisions.
    """
    from .holonomy import phi_map

    c = cov.c
    th = cov.theta if theta is None else theta
    if periodic is None:
        periodic = hook is None and F is not None and F.fiber.manifold == "torus"

    # sample every slice once
    slices = {}
    shapes = None
    for i in range(c):
        for r in cov.boundary_values(i):
            if c == 1:
                pts, shapes = np.array([[r]]), []
            else:
                pts, shapes = _slice_points(c, i, r, grid_step)
            slices[(i, float(r))] = pts
    keys = list(slices)
    allpts = np.vstack([slices[k] for k in keys])
    if hook is not None:
        img = np.asarray(hook(allpts), float)
    else:
        img = phi_map(F, fam, x0, allpts, tol).z
    if img.ndim == 1:
        img = img[:, None]
    images = {}
    pos = 0
    for k in keys:
        n = len(slices[k])
        images[k] = img[pos:pos + n]
        pos += n

    def dist(a, b):
        d = a - b
        if periodic:
            d = d - np.round(d)
        return np.linalg.norm(d, axis=-1)

    # Holder constant along slice grid neighbours
    lam = 0.0
    if c > 1:
        for k in keys:
            im = images[k].reshape(tuple(shapes) + (img.shape[1],))
            for ax in range(c - 1):
                a = np.take(im, range(0, im.shape[ax] - 1), axis=ax)
                b = np.take(im, range(1, im.shape[ax]), axis=ax)
                lam = max(lam, float(np.max(dist(a, b))) / grid_step ** th)
    rho = lam * (grid_step * math.sqrt(max(c - 1, 0)) / 2.0) ** th
    delta = max(2.0 * rho, floor)
    rep = StableValueReport("pass", delta, lam, th)

    boxsize = 1.0 if periodic else None
    for i in range(c):
        axis_keys = [k for k in keys if k[0] == i]
        trees = {}
        for k in axis_keys:
            pts = np.mod(images[k], 1.0) if periodic else images[k]
            trees[k] = cKDTree(pts, boxsize=boxsize)
        # neighbour graph at radius delta (pairs) and 2 delta (needed for cliques)
        near = {k: set() for k in axis_keys}
        near2 = {k: set() for k in axis_keys}
        pair_min = math.inf
        for a_idx, a in enumerate(axis_keys):
            for b in axis_keys[a_idx + 1:]:
                dd, _ = trees[b].query(trees[a].data, k=1, distance_upper_bound=2 * delta)
                m = float(np.min(dd))
                if m < math.inf:
                    pair_min = min(pair_min, m)
                if m <= 2 * delta:
                    near2[a].add(b)
                    near2[b].add(a)
                if m <= delta:
                    near[a].add(b)
                    near[b].add(a)
        rep.rows.append((i, "pairwise_min", pair_min if pair_min < math.inf else float("inf"),
                         delta, "pass" if pair_min > delta else "check"))
        # enumerate K0-subsets anchored at their first element
        order = {k: n for n, k in enumerate(axis_keys)}
        K0 = cov.K0
        count = 0

        def extend(anchor, chosen, cands):
            nonlocal count
            if len(chosen) == K0:
                count += 1
                yield list(chosen)
                return
            for n_, k in enumerate(cands):
                if all(k in near2[q] for q in chosen[1:]):
                    yield from extend(anchor, chosen + [k], cands[n_ + 1:])

        for anchor in axis_keys:
            cands = sorted((k for k in near[anchor] if order[k] > order[anchor]), key=order.get)
            if len(cands) < K0 - 1:
                continue
            for subset in extend(anchor, [anchor], cands):
                rep.subsets_checked += 1
                if rep.subsets_checked > max_subsets:
                    rep.verdict = "inconclusive"
                    rep.witness = {"reason": "subset enumeration cap reached", "axis": i}
                    return rep
                a_pts = np.mod(images[anchor], 1.0) if periodic else images[anchor]
                worst = np.zeros(len(a_pts))
                for k in subset[1:]:
                    dd, _ = trees[k].query(a_pts, k=1)
                    worst = np.maximum(worst, dd)
                sep = float(worst.min())
                values = [k[1] for k in subset]
                if sep < floor:
                    p = int(worst.argmin())
                    rep.rows.append((i, values, sep, delta, "fail"))
                    rep.verdict = "fail"
                    rep.witness = {"axis": i, "values": values,
                                   "s": slices[anchor][p].tolist(),
                                   "image": images[anchor][p].tolist(), "separation": sep}
                    return rep
                if sep <= delta:
                    rep.rows.append((i, values, sep, delta, "inconclusive"))
                    if rep.verdict == "pass":
                        rep.verdict = "inconclusive"
                        rep.witness = {"axis": i, "values": values, "separation": sep}
                else:
                    rep.rows.append((i, values, sep, delta, "pass"))
    return rep
