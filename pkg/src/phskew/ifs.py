"""Bernoulli iterated function systems: sampling, uniformity estimates and
certificates, Lyapunov spectra, conjugated families, nontransversality and
orbit-density diagnostics."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import ndtri
from scipy.stats import qmc

from .deformation import fit_line
from .errors import DegenerateFit, DimMismatch, GridTooFine
from .grassmann import GrassmannPoint, orthonormalize, principal_angle
from .parallel import ordered_map
from .primitives import (
    Constant,
    FiberMap,
    Inverted,
    LinearToral,
    Translation,
)

ENUM_CAP = 4096
MAX_CELLS = 10**8
STRICT = 1e-12


@dataclass(frozen=True, eq=False)
class IFSSpec:
    maps: tuple
    manifold: str = "torus"
    dim: int = 2
    seed: int = 0

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise ValueError("an IFS needs at least one map")
        for m in maps:
            if m.manifold != self.manifold or m.dim != self.dim:
                raise DimMismatch("all maps must act on the same manifold")
            if m.uses_image or m.base_dependent:
                raise ValueError("IFS maps must not depend on a base point")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        object.__setattr__(self, "_jacs", tuple(_constant_jac(m) for m in maps))

    @property
    def k(self) -> int:
        return len(self.maps)

    @property
    def ambient_dim(self) -> int:
        return self.maps[0].ambient_dim

    @property
    def constant_derivative(self) -> bool:
        return all(j is not None for j in self._jacs)

    def reduce(self, z):
        return self.maps[0].reduce(z)

    def tangent_jac(self, i: int, x):
        """Derivatives (B, c, c) of map i at the points x (B, ambient)."""
        J = self._jacs[i]
        if J is not None:
            return np.broadcast_to(J, (x.shape[0],) + J.shape)
        return self.maps[i].tangent_jac(None, x)

    def apply(self, i: int, x):
        return self.reduce(self.maps[i].apply(None, x))


def _constant_jac(m: FiberMap):
    """Constant derivative of a composition, or None.  Integer toral factors
    are multiplied exactly so long conjugation chains keep every digit."""
    if m.manifold == "sphere":
        return None if m.primitives else np.eye(m.dim)
    exact = True
    J = np.eye(m.dim, dtype=np.int64).astype(object)
    for p in m.primitives:
        q, inv = (p.inner, True) if isinstance(p, Inverted) else (p, False)
        if isinstance(q, LinearToral):
            M = q._minv if inv else q._m
            if exact and not q.euclidean:
                J = np.round(M).astype(np.int64).astype(object) @ J
            else:
                exact = False
                J = np.asarray(M, float) @ np.asarray(J, float)
        elif isinstance(q, Translation) and isinstance(q.profile, Constant):
            continue
        else:
            return None
    return np.asarray(J, float)


# -------------------------------------------------------------- sampling

def _rng(spec: IFSSpec, stream_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, int(stream_id)]))


def sample_word(spec: IFSSpec, n: int, stream_id: int = 0) -> np.ndarray:
    """Word in {1..k}^n; a deterministic function of (seed, stream_id).

    The first letter is the first map applied.
    """
    if spec.k == 1:
        return np.ones(n, np.int64)
    return _rng(spec, stream_id).integers(1, spec.k + 1, size=n, dtype=np.int64)


def _word_matrix(spec: IFSSpec, n: int, samples: int, mode: str, first_stream: int = 0):
    """0-based words (S, n), and whether they enumerate the distribution exactly."""
    if mode not in ("auto", "enumerate", "mc"):
        raise ValueError(f"unknown mode {mode!r}")
    total = spec.k ** n
    if mode == "enumerate" or (mode == "auto" and total <= ENUM_CAP):
        if total > 10**7:
            raise ValueError("too many words to enumerate")
        W = np.array(list(itertools.product(range(spec.k), repeat=n)), np.int64).reshape(total, n)
        return W, True
    W = np.stack([sample_word(spec, n, first_stream + s) - 1 for s in range(samples)])
    return W.reshape(samples, n), False


# ------------------------------------------------- C(x, E, n) and D(x, E, n)

@dataclass
class Estimate:
    mean: float
    stderr: float
    exact: bool
    n_words: int

    def __iter__(self):
        return iter((self.mean, self.stderr))


def _complete_qr(A):
    # frames (S, d, d): first l columns span A's range
    Q, _ = np.linalg.qr(A, mode="complete")
    return Q


def _integrands(spec: IFSSpec, x, E: GrassmannPoint, W: np.ndarray):
    """Per-word log sup of the compressed complement product and log inf of
    the restricted product, accumulated step by step."""
    S, n = W.shape
    d, l = E.d, E.l
    if d != spec.dim:
        raise DimMismatch(f"subspace in R^{d}, manifold of dimension {spec.dim}")
    x = np.broadcast_to(np.atleast_2d(np.asarray(x, float)), (S, spec.ambient_dim)).copy()
    Q0 = _complete_qr(np.broadcast_to(E.frame, (1, d, l)))[0]
    Ef = np.broadcast_to(E.frame, (S, d, l)).copy()
    Nf = np.broadcast_to(Q0[:, l:], (S, d, d - l)).copy()
    Pc = np.broadcast_to(np.eye(d - l), (S, d - l, d - l)).copy()
    Pd = np.broadcast_to(np.eye(l), (S, l, l)).copy()
    logc = np.zeros(S)
    logd = np.zeros(S)
    const = spec.constant_derivative
    for t in range(n):
        J = np.empty((S, d, d))
        for i in range(spec.k):
            mask = W[:, t] == i
            if not mask.any():
                continue
            J[mask] = spec.tangent_jac(i, x[mask])
            if not const:
                x[mask] = spec.apply(i, x[mask])
        JE = J @ Ef
        Q = _complete_qr(JE)
        E1, N1 = Q[:, :, :l], Q[:, :, l:]
        Mc = np.swapaxes(N1, 1, 2) @ J @ Nf
        Md = np.swapaxes(E1, 1, 2) @ JE
        Pc = Mc @ Pc
        Pd = Md @ Pd
        # rescale to keep the products in range
        if d - l:
            s = np.linalg.norm(Pc, axis=(1, 2))
            Pc /= s[:, None, None]
            logc += np.log(s)
        if l:
            s = np.linalg.norm(Pd, axis=(1, 2))
            Pd /= s[:, None, None]
            logd += np.log(s)
        Ef, Nf = E1, N1
    if d - l:
        logc += np.log(np.linalg.svd(Pc, compute_uv=False)[:, 0])
    else:
        logc[:] = -np.inf
    if l:
        logd += np.log(np.linalg.svd(Pd, compute_uv=False)[:, -1])
    else:
        logd[:] = np.inf
    return logc, logd


def _summarize(v: np.ndarray, exact: bool) -> Estimate:
    m = float(np.mean(v))
    if exact or len(v) < 2 or not np.isfinite(m):
        se = 0.0 if exact or len(v) < 2 else float("nan")
    else:
        se = float(np.std(v, ddof=1) / math.sqrt(len(v)))
    return Estimate(m, se, exact, len(v))


def _run_integrands(spec, x, E, W, workers, chunk=4096):
    parts = [W[i:i + chunk] for i in range(0, len(W), chunk)]
    out = ordered_map(lambda w: _integrands(spec, x, E, w), parts, workers)
    return np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out])


def _check_E(spec, E):
    if E.d != spec.dim:
        raise DimMismatch(f"subspace in R^{E.d} for a {spec.dim}-dimensional manifold")


def estimate_C(spec: IFSSpec, x, E: GrassmannPoint, n: int, samples: int = 10**4,
               mode: str = "auto", workers: int = 1) -> Estimate:
    """E log sup_{v in E^perp} |P_{(Df^n E)^perp} Df^n v| over words of length n."""
    _check_E(spec, E)
    W, exact = _word_matrix(spec, n, samples, mode)
    c, _ = _run_integrands(spec, x, E, W, workers)
    return _summarize(c, exact)


def estimate_D(spec: IFSSpec, x, E: GrassmannPoint, n: int, samples: int = 10**4,
               mode: str = "auto", workers: int = 1) -> Estimate:
    """E log inf_{u in E} |Df^n u| over words of length n."""
    _check_E(spec, E)
    W, exact = _word_matrix(spec, n, samples, mode)
    _, d = _run_integrands(spec, x, E, W, workers)
    return _summarize(d, exact)


# ------------------------------------------------------------ certificates

@dataclass
class UniformityGrid:
    points: np.ndarray          # (P, ambient)
    subspaces: list             # GrassmannPoints of dimension d - b
    resolution: tuple

    def __len__(self):
        return len(self.points) * len(self.subspaces)


def grassmann_grid(d: int, l: int, res: int) -> list:
    """Deterministic grid on Gr(l, d): coordinate subspaces first, then a
    uniform angle grid (d = 2) or low-discrepancy Gaussian frames."""
    out = []
    if l == 0 or l == d:
        return [GrassmannPoint(np.eye(d)[:, :l])]
    for cols in itertools.combinations(range(d), l):
        out.append(GrassmannPoint(np.eye(d)[:, list(cols)]))
    if d == 2:
        for j in range(1, res):
            a = math.pi * j / res
            if any(abs(a - b) < 1e-15 for b in (math.pi / 2,)):
                continue
            out.append(GrassmannPoint(np.array([[math.cos(a)], [math.sin(a)]])))
        return out
    h = qmc.Halton(d * l, scramble=False).random(res + 1)[1:]
    for row in h:
        g = ndtri(np.clip(row, 1e-12, 1 - 1e-12)).reshape(d, l)
        out.append(orthonormalize(g))
    return out


def point_grid(spec: IFSSpec, res: int) -> np.ndarray:
    if spec.constant_derivative:
        x = np.zeros((1, spec.ambient_dim))
        if spec.manifold == "sphere":
            x[0, 0] = 1.0
        return x
    if spec.manifold == "sphere":
        h = qmc.Halton(spec.ambient_dim, scramble=False).random(res + 1)[1:]
        g = ndtri(np.clip(h, 1e-12, 1 - 1e-12))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    ax = (np.arange(res) + 0.5) / res
    return np.array(list(itertools.product(ax, repeat=spec.dim)))


def make_grid(spec: IFSSpec, b: int, res_x: int = 4, res_E: int = 64) -> UniformityGrid:
    return UniformityGrid(point_grid(spec, res_x), grassmann_grid(spec.dim, spec.dim - b, res_E),
                          (res_x, res_E))


@dataclass
class UniformityCertificate:
    n0: int
    kappa1: float
    kappa2: float
    b: int
    resolution: tuple
    samples: int
    exact: bool
    confidence: str
    C_max: float
    C_stderr: float
    D_min: float
    D_stderr: float
    C_witness: tuple = None
    D_witness: tuple = None
    valid: bool = True

    def margins(self):
        return {"C_over_n0": self.C_max / self.n0, "D_over_n0": self.D_min / self.n0}


@dataclass
class UniformityRefusal:
    reason: str
    n0: int
    b: int
    x: np.ndarray
    E: GrassmannPoint
    value: float
    stderr: float
    resolution: tuple
    C_max: float = float("nan")
    D_min: float = float("nan")
    kappa1: float = float("nan")
    kappa2: float = float("nan")
    valid: bool = False


def _perturb(E: GrassmannPoint, i, j, step):
    # move E along the tangent direction e_j -> n_i of the Grassmannian
    N = E.complement().frame
    f = E.frame.copy()
    f[:, j] = math.cos(step) * f[:, j] + math.sin(step) * N[:, i]
    return orthonormalize(f)


def _refine(fn, x, E, start_val, step, sign, max_iter=2000, min_step=1e-14):
    """Local coordinate search on the Grassmannian; sign=+1 maximizes."""
    best, bestE = start_val, E
    d, l = E.d, E.l
    while step > min_step and max_iter > 0:
        improved = False
        for i in range(d - l):
            for j in range(l):
                for s in (step, -step):
                    cand = _perturb(bestE, i, j, s)
                    v = fn(x, cand)
                    max_iter -= 1
                    if sign * (v.mean - best.mean) > 0:
                        best, bestE, improved = v, cand, True
        if not improved:
            step *= 0.5
    return best, bestE


def _word_candidates(spec: IFSSpec, W: np.ndarray, l: int, cap: int = ENUM_CAP) -> list:
    """Most contracted l-planes of the word products (constant derivatives only).

    With one word far more anisotropic than the others the extremes of C and
    D sit in windows narrower than any fixed grid, right at these planes.
    """
    if not spec.constant_derivative or not 0 < l < spec.dim:
        return []
    x = np.zeros((1, spec.ambient_dim))
    J = np.array([spec.tangent_jac(i, x)[0] for i in range(spec.k)])
    out = []
    for w in np.unique(W[:cap], axis=0):
        A = np.eye(spec.dim)
        for i in w:
            A = J[i] @ A
        _, _, Vt = np.linalg.svd(A)
        out.append(orthonormalize(Vt[-l:].T))
    return out


def certify_uniformity(spec: IFSSpec, b: int, n0: int, grid=None, samples: int = 10**4,
                       mode: str = "auto", refine: bool = True, workers: int = 1):
    """Largest kappa1 and smallest kappa2 supported at three standard errors."""
    d = spec.dim
    if not 0 < b < d:
        raise ValueError("need 0 < b < d")
    if grid is None:
        grid = make_grid(spec, b)
    elif isinstance(grid, tuple):
        grid = make_grid(spec, b, *grid)
    W, exact = _word_matrix(spec, n0, samples, mode)
    items = [(x, E) for x in grid.points for E in grid.subspaces]
    items += [(grid.points[0], E) for E in _word_candidates(spec, W, d - b)]

    def both(item):
        c, dd = _integrands(spec, item[0], item[1], W)
        return _summarize(c, exact), _summarize(dd, exact)

    res = ordered_map(both, items, workers)
    ic = max(range(len(items)), key=lambda i: (res[i][0].mean, -i))
    idd = min(range(len(items)), key=lambda i: (res[i][1].mean, i))
    cbest, dbest = res[ic][0], res[idd][1]
    xc, Ec = items[ic]
    xd, Ed = items[idd]
    if refine and 0 < d - b < d:
        step = math.pi / max(grid.resolution[1], 2)
        fc = lambda x, E: _summarize(_integrands(spec, x, E, W)[0], exact)
        fd = lambda x, E: _summarize(_integrands(spec, x, E, W)[1], exact)
        cbest, Ec = _refine(fc, xc, Ec, cbest, step, +1)
        dbest, Ed = _refine(fd, xd, Ed, dbest, step, -1)
    S = len(W)
    upper_c = cbest.mean + 3 * cbest.stderr
    lower_d = dbest.mean - 3 * dbest.stderr
    if not upper_c < 0:
        return UniformityRefusal("C not negative", n0, b, xc, Ec, cbest.mean, cbest.stderr,
                                 grid.resolution, cbest.mean, dbest.mean)
    k1 = -upper_c / n0 - STRICT
    k2 = -lower_d / n0 + STRICT
    if not k2 < k1:
        return UniformityRefusal("kappa2 >= kappa1", n0, b, xd, Ed, dbest.mean, dbest.stderr,
                                 grid.resolution, cbest.mean, dbest.mean, k1, k2)
    return UniformityCertificate(n0, k1, k2, b, grid.resolution, S, exact,
                                 "exact enumeration" if exact else "3-sigma normal",
                                 cbest.mean, cbest.stderr, dbest.mean, dbest.stderr,
                                 (xc, Ec), (xd, Ed))


@dataclass
class MomentReport:
    n_list: list
    moments: list
    slope: float
    bound: float
    passed: bool
    refusal: str | None = None


def moment_decay_check(spec: IFSSpec, b: int, sigma_exp: float, n_list, samples: int = 10**4,
                       n0: int = 2, grid=None, certificate=None, workers: int = 1) -> MomentReport:
    """Fit log E[sup|P Df^n|^sigma] against n at the worst certified point."""
    n_list = list(n_list)
    if len(set(n_list)) < 2:
        raise DegenerateFit("need at least two distinct n")
    cert = certificate or certify_uniformity(spec, b, n0, grid, samples, workers=workers)
    if not isinstance(cert, UniformityCertificate):
        return MomentReport(n_list, [], float("nan"), float("nan"), False,
                            f"no uniformity certificate: {cert.reason}")
    x, E = cert.C_witness
    moms = []
    for n in n_list:
        W, exact = _word_matrix(spec, n, samples, "auto")
        c, _ = _run_integrands(spec, x, E, W, workers)
        moms.append(float(np.mean(np.exp(sigma_exp * c))))
    slope, _, _ = fit_line(n_list, np.log(moms))
    bound = -sigma_exp * cert.kappa1 + 0.05
    return MomentReport(n_list, moms, slope, bound, slope <= bound)


# --------------------------------------------------------------- Lyapunov

def lyapunov_spectrum(spec: IFSSpec, x, n: int, stream_id: int = 0) -> np.ndarray:
    """QR accumulation along one sampled word; ascending exponents."""
    if n < 1000:
        raise ValueError("n must be at least 1000")
    w = sample_word(spec, n, stream_id) - 1
    c = spec.dim
    x = np.atleast_2d(np.asarray(x, float)).copy()
    Q = np.eye(c)
    acc = np.zeros(c)
    const = spec.constant_derivative
    for t in range(n):
        i = w[t]
        J = spec.tangent_jac(i, x)[0]
        if not const:
            x = spec.apply(i, x)
        Q, R = np.linalg.qr(J @ Q)
        acc += np.log(np.abs(np.diag(R)))
    return np.sort(acc / n)


# ---------------------------------------------------- conjugated families

def build_conjugated_family(g: FiberMap, hs, K: int, seed: int = 0) -> IFSSpec:
    """{h_i} together with {g^K h_i g^-K}, as composition lists."""
    hs = list(hs)
    if not hs:
        raise ValueError("need at least one h")
    gi = g.inverted()
    maps = list(hs)
    for h in hs:
        prims = gi.primitives * K + h.primitives + g.primitives * K
        maps.append(FiberMap(prims, g.manifold, g.dim))
    return IFSSpec(tuple(maps), g.manifold, g.dim, seed)


# ----------------------------------------------------- nontransversality

@dataclass
class EtaReport:
    eta_hat: float
    tol_angle: float
    witness: tuple
    fractions: np.ndarray


def measure_nontransversality(spec: IFSSpec, P, l: int, grid=None, tol_angle: float = 1e-3,
                              workers: int = 1) -> EtaReport:
    """Worst fraction of maps sending (x, E) non-transversally to P."""
    d = spec.dim
    if grid is None:
        grid = make_grid(spec, l)
    elif isinstance(grid, tuple):
        grid = make_grid(spec, l, *grid)
    Pf = P if callable(P) else (lambda x, _P=P: _P)
    items = [(x, E) for x in grid.points for E in grid.subspaces]
    for _, E in items[:1]:
        if E.l != d - l:
            raise DimMismatch("grid subspaces must have dimension d - l")

    def frac(item):
        x, E = item
        bad = 0
        for i in range(spec.k):
            J = spec.tangent_jac(i, x[None])[0]
            img = orthonormalize(J @ E.frame)
            Pi = Pf(spec.apply(i, x[None])[0])
            if principal_angle(img, Pi) <= tol_angle:
                bad += 1
        return bad / spec.k

    fr = np.array(ordered_map(frac, items, workers))
    j = int(np.argmax(fr))
    return EtaReport(float(fr[j]), tol_angle, items[j], fr)


# ---------------------------------------------------------- orbit density

def _kernel_ops(spec: IFSSpec):
    codes, ioff, foff, ints, floats, starts = [], [0], [0], [], [], [0]
    for m in spec.maps:
        for p in m.primitives:
            op = p.numba_op()
            if op is None:
                return None
            c, ip, fp = op
            codes.append(c)
            ints.extend(np.asarray(ip, np.int64).tolist())
            floats.extend(np.asarray(fp, float).tolist())
            ioff.append(len(ints))
            foff.append(len(floats))
        starts.append(len(codes))
    return (np.array(codes, np.int64), np.array(ioff, np.int64), np.array(foff, np.int64),
            np.array(ints, np.int64), np.array(floats, float), np.array(starts, np.int64))


_KERNEL = None


def _get_kernel():
    global _KERNEL
    if _KERNEL is None:
        try:
            import numba
        except ImportError:      # pragma: no cover
            _KERNEL = False
            return _KERNEL
        _KERNEL = numba.njit(_make_orbit(numba.njit(_cell_index)))
    return _KERNEL


def _make_orbit(cell_index):
    def orbit(x0, word, codes, ioff, foff, ints, flts, starts, torus, cellmode, nax, hits):
        """Iterate the orbit and record the first-hit time of every cell."""
        n = word.shape[0]
        dim = x0.shape[0]
        z = x0.copy()
        tmp = np.empty(dim)
        two_pi = 2.0 * np.pi
        for t in range(n):
            m = word[t]
            for q in range(starts[m], starts[m + 1]):
                c = codes[q]
                f0 = foff[q]
                i0 = ioff[q]
                if c == 0 or c == 4:
                    for a in range(dim):
                        s = 0.0
                        for b in range(dim):
                            s += flts[f0 + a * dim + b] * z[b]
                        tmp[a] = s
                    for a in range(dim):
                        z[a] = tmp[a]
                elif c == 1:
                    for a in range(dim):
                        z[a] += flts[f0 + a]
                elif c == 2:
                    ax = ints[i0]
                    src = ints[i0 + 1]
                    if ints[i0 + 2] == 1:
                        z[ax] += flts[f0] * np.sin(two_pi * z[src]) / two_pi
                    else:
                        z[ax] += flts[f0] * z[src]
                elif c == 3:
                    arg = flts[f0 + 2 * dim]
                    for a in range(dim):
                        arg += two_pi * flts[f0 + dim + a] * z[a]
                    s = np.sin(arg)
                    for a in range(dim):
                        z[a] += flts[f0 + a] * s
                elif c == 5:
                    ang = 0.0
                    cu = 0.0
                    cv = 0.0
                    for a in range(dim):
                        ang += flts[f0 + a] * z[a]
                        cu += flts[f0 + dim + a] * z[a]
                        cv += flts[f0 + 2 * dim + a] * z[a]
                    ang *= flts[f0 + 3 * dim]
                    cs = np.cos(ang)
                    sn = np.sin(ang)
                    nu = cs * cu - sn * cv
                    nv = sn * cu + cs * cv
                    for a in range(dim):
                        z[a] += (nu - cu) * flts[f0 + dim + a] + (nv - cv) * flts[f0 + 2 * dim + a]
            if torus:
                for a in range(dim):
                    z[a] -= np.floor(z[a])
            else:
                r = 0.0
                for a in range(dim):
                    r += z[a] * z[a]
                r = np.sqrt(r)
                for a in range(dim):
                    z[a] /= r
            idx = cell_index(z, cellmode, nax)
            if hits[idx] < 0:
                hits[idx] = t + 1
        return z
    return orbit


def _cell_index(z, cellmode, nax):
    if cellmode == 0:        # torus: product grid
        idx = 0
        for a in range(z.shape[0]):
            k = int(z[a] * nax[a])
            if k >= nax[a]:
                k = nax[a] - 1
            idx = idx * nax[a] + k
        return idx
    if cellmode == 1:        # circle: angle cells
        ang = np.arctan2(z[1], z[0]) / (2.0 * np.pi) + 0.5
        k = int(ang * nax[0])
        return k if k < nax[0] else nax[0] - 1
    # S^2: equal-area cylinder cells (height, longitude)
    h = int((z[2] + 1.0) * 0.5 * nax[0])
    if h >= nax[0]:
        h = nax[0] - 1
    ang = np.arctan2(z[1], z[0]) / (2.0 * np.pi) + 0.5
    k = int(ang * nax[1])
    if k >= nax[1]:
        k = nax[1] - 1
    return h * nax[1] + k


@dataclass
class DensityReport:
    n: int
    eps: float
    cells_total: int
    cells_visited: int
    coverage: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    largest_empty_radius: float
    kernel: str
    final_point: np.ndarray = field(repr=False, default=None)


def _grid_shape(spec: IFSSpec, eps: float):
    side = 2.0 * eps
    if spec.manifold == "sphere":
        if spec.dim == 1:
            return 1, (max(1, math.ceil(2 * math.pi / side)),)
        if spec.dim == 2:
            return 2, (max(1, math.ceil(2.0 / side)), max(1, math.ceil(2 * math.pi / side)))
        raise ValueError("orbit_density supports S^1 and S^2 only")
    if spec.manifold != "torus":
        raise ValueError("orbit_density needs a compact fiber")
    return 0, tuple([max(1, math.ceil(1.0 / side))] * spec.dim)


def orbit_density(spec: IFSSpec, x0, n: int, eps: float, stream_id: int = 0,
                  bins: int = 20, use_kernel: bool = True) -> DensityReport:
    """Cells of side 2*eps visited by one sampled orbit of length n."""
    mode, shape = _grid_shape(spec, eps)
    cells = int(np.prod(shape, dtype=np.float64))
    if cells >= MAX_CELLS:
        raise GridTooFine(f"{cells} cells exceed the cap {MAX_CELLS}")
    word = sample_word(spec, n, stream_id) - 1
    hits = np.full(cells, -1, np.int64)
    x0 = spec.reduce(np.atleast_2d(np.asarray(x0, float)))[0]
    nax = np.array(shape, np.int64)
    ops = _kernel_ops(spec) if use_kernel else None
    kern = _get_kernel() if ops is not None else None
    if kern:
        z = kern(x0, word, *ops, spec.manifold == "torus", mode, nax, hits)
        used = "numba"
    else:
        z = x0[None].copy()
        for t in range(n):
            z = spec.apply(int(word[t]), z)
            idx = _cell_index(z[0], mode, nax)
            if hits[idx] < 0:
                hits[idx] = t + 1
        z = z[0]
        used = "python"
    visited = hits >= 0
    nv = int(visited.sum())
    edges = np.unique(np.geomspace(1, max(n, 2), bins + 1).round().astype(np.int64))
    counts, _ = np.histogram(hits[visited], bins=edges)
    radius = _largest_empty(visited.reshape(shape), mode, shape)
    return DensityReport(n, eps, cells, nv, nv / cells, edges, counts, radius, used, z)


def _largest_empty(visited: np.ndarray, mode: int, shape) -> float:
    """Lower bound (D - 1/2) * cell for an unvisited chessboard distance D."""
    if visited.all():
        return 0.0
    if not visited.any():
        return float("inf")
    if visited.size > 2 * 10**7:
        return float("nan")
    if mode == 0:
        pad = [(s // 2, s // 2) for s in shape]
        big = np.pad(~visited, pad, mode="wrap")
        dt = ndimage.distance_transform_cdt(big, metric="chessboard")
        core = tuple(slice(p[0], p[0] + s) for p, s in zip(pad, shape))
        D = int(dt[core].max())
        return (D - 0.5) / shape[0]
    if mode == 1:
        big = np.pad(~visited, (shape[0] // 2, shape[0] // 2), mode="wrap")
        dt = ndimage.distance_transform_cdt(big, metric="chessboard")
        D = int(dt[shape[0] // 2: shape[0] // 2 + shape[0]].max())
        return (D - 0.5) * 2 * math.pi / shape[0]
    # S^2: wrap in longitude only; geodesic cell extent taken at the worst row
    nh, nphi = shape
    big = np.pad(~visited, ((0, 0), (nphi // 2, nphi // 2)), mode="wrap")
    big = np.pad(big, ((1, 1), (0, 0)), constant_values=True)
    dt = ndimage.distance_transform_cdt(big, metric="chessboard")[1:-1, nphi // 2: nphi // 2 + nphi]
    r, _ = np.unravel_index(int(np.argmax(dt)), dt.shape)
    D = int(dt.max())
    dh = 2.0 / nh
    lo, hi = max(0, r - D + 1), min(nh, r + D)
    heights = -1.0 + dh * np.arange(lo, hi + 1)
    ring = float(np.sqrt(max(0.0, 1.0 - np.max(heights ** 2))))
    return (D - 0.5) * min(dh, 2 * math.pi / nphi * ring)
