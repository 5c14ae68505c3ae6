"""Subspaces as orthonormal frames, and single-step uniformity integrands."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, RankDeficient, Singular

ORTHO_TOL = 1e-10
_RANK_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    frame: np.ndarray

    def __post_init__(self):
        f = np.array(self.frame, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        if f.ndim != 2 or f.shape[1] > f.shape[0]:
            raise DimMismatch(f"bad frame shape {f.shape}")
        g = f.T @ f
        if f.shape[1] and np.max(np.abs(g - np.eye(f.shape[1]))) > ORTHO_TOL:
            raise ValueError("frame columns are not orthonormal")
        f.setflags(write=False)
        object.__setattr__(self, "frame", f)

    @property
    def d(self) -> int:
        return self.frame.shape[0]

    @property
    def l(self) -> int:
        return self.frame.shape[1]

    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.T

    def complement(self) -> "GrassmannPoint":
        return GrassmannPoint(complement_frame(self.frame))

    def same_subspace(self, other: "GrassmannPoint", tol: float = 1e-9) -> bool:
        if self.d != other.d or self.l != other.l:
            return False
        if self.l == 0:
            return True
        return principal_angle_max(self, other) < tol

    def __repr__(self):
        return f"GrassmannPoint(d={self.d}, l={self.l})"


def orthonormalize(raw) -> GrassmannPoint:
    a = np.array(raw, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] == 0:
        return GrassmannPoint(np.zeros((a.shape[0], 0)))
    if a.shape[1] > a.shape[0]:
        raise RankDeficient("more columns than ambient dimension")
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0 or s[-1] <= _RANK_RTOL * s[0]:
        raise RankDeficient(f"singular values {s}")
    q, r = np.linalg.qr(a)
    sgn = np.sign(np.diag(r))
    sgn[sgn == 0] = 1.0
    return GrassmannPoint(q * sgn)


def span(*vectors) -> GrassmannPoint:
    return orthonormalize(np.column_stack([np.asarray(v, float) for v in vectors]))


def complement_frame(frame: np.ndarray) -> np.ndarray:
    d, l = frame.shape
    if l == 0:
        return np.eye(d)
    # last d-l left singular vectors span the orthogonal complement
    u, _, _ = np.linalg.svd(frame, full_matrices=True)
    n = u[:, l:]
    # pin signs for reproducibility: largest-magnitude entry positive
    idx = np.argmax(np.abs(n), axis=0)
    sgn = np.sign(n[idx, np.arange(n.shape[1])])
    sgn[sgn == 0] = 1.0
    return n * sgn


def _sines(E: np.ndarray, F: np.ndarray) -> np.ndarray:
    # sines of principal angles for dim F <= dim E
    r = F - E @ (E.T @ F)
    return np.linalg.svd(r, compute_uv=False)


def principal_angle(E: GrassmannPoint, F: GrassmannPoint) -> float:
    """Smallest principal angle between two subspaces, in [0, pi/2]."""
    if E.d != F.d:
        raise DimMismatch(f"ambient dims {E.d} and {F.d}")
    if E.l == 0 or F.l == 0:
        return float(np.pi / 2)
    cos = np.linalg.svd(E.frame.T @ F.frame, compute_uv=False)
    c = float(min(cos[0], 1.0))
    if c < 0.99:
        return float(np.arccos(c))
    # small angles: the sine route keeps full relative accuracy
    big, small = (E, F) if E.l >= F.l else (F, E)
    s = _sines(big.frame, small.frame)
    return float(np.arcsin(min(s.min(), 1.0)))


def principal_angle_max(E: GrassmannPoint, F: GrassmannPoint) -> float:
    """Largest principal angle (a metric on the Grassmannian for equal dims)."""
    if E.d != F.d or E.l != F.l:
        raise DimMismatch("need equal dimensions")
    s = _sines(E.frame, F.frame)
    return float(np.arcsin(min(s.max(), 1.0)))


def project_complement(E: GrassmannPoint, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != E.d:
        raise DimMismatch(f"vector of size {v.shape} in ambient {E.d}")
    f = E.frame
    return v - f @ (f.T @ v)


def _check_df(Df, d):
    Df = np.asarray(Df, dtype=float)
    if Df.shape != (d, d):
        raise DimMismatch(f"Df shape {Df.shape} vs ambient {d}")
    s = np.linalg.svd(Df, compute_uv=False)
    if s[-1] == 0 or s[-1] < 1e-14 * s[0]:
        raise Singular("derivative is singular")
    return Df


def pushforward(Df, E: GrassmannPoint) -> GrassmannPoint:
    Df = _check_df(Df, E.d)
    return orthonormalize(Df @ E.frame)


def compressed_complement_map(Df, E: GrassmannPoint):
    """Matrix of P_{(Df E)^perp} Df restricted to E^perp, in complement frames."""
    Df = _check_df(Df, E.d)
    img = orthonormalize(Df @ E.frame)
    n_in = complement_frame(E.frame)
    n_out = complement_frame(img.frame)
    return n_out.T @ Df @ n_in, img


def step_C(Df, E: GrassmannPoint) -> float:
    m, _ = compressed_complement_map(Df, E)
    if m.size == 0:
        return float("-inf")
    return float(np.log(np.linalg.svd(m, compute_uv=False)[0]))


def step_D(Df, E: GrassmannPoint) -> float:
    Df = _check_df(Df, E.d)
    if E.l == 0:
        return float("inf")
    s = np.linalg.svd(Df @ E.frame, compute_uv=False)
    return float(np.log(s[-1]))


@dataclass(frozen=True, eq=False)
class TangentMap:
    """phi: E -> E^perp stored as a (d-l) x l matrix in the frames (E, N)."""

    phi: np.ndarray
    E: GrassmannPoint
    N: np.ndarray = None

    def __post_init__(self):
        n = complement_frame(self.E.frame) if self.N is None else np.asarray(self.N, float)
        object.__setattr__(self, "N", n)
        p = np.atleast_2d(np.asarray(self.phi, dtype=float))
        if p.shape != (self.E.d - self.E.l, self.E.l):
            raise DimMismatch(f"phi shape {p.shape}")
        object.__setattr__(self, "phi", p)

    def ambient(self) -> np.ndarray:
        """phi as a d x d operator (zero on E^perp)."""
        return self.N @ self.phi @ self.E.frame.T

    def norm(self) -> float:
        return float(np.linalg.norm(self.phi, 2)) if self.phi.size else 0.0


def lift_tangent_action(Df, E: GrassmannPoint, phi: TangentMap) -> TangentMap:
    """Action of the Grassmannian lift on tangent vectors at E.

    psi(u) = P_{(Df E)^perp} Df phi(Df^{-1} u) for u in Df E.
    """
    Df = _check_df(Df, E.d)
    img = orthonormalize(Df @ E.frame)
    n_out = complement_frame(img.frame)
    dinv_e = np.linalg.solve(Df, img.frame)        # Df^{-1} E', lies in E
    psi = n_out.T @ Df @ phi.ambient() @ dinv_e
    return TangentMap(psi, img, n_out)


def finsler_norm(v, phi: TangentMap) -> float:
    return float(np.linalg.norm(v)) + phi.norm()


def random_subspace(d: int, l: int, rng) -> GrassmannPoint:
    return orthonormalize(rng.standard_normal((d, l)))
