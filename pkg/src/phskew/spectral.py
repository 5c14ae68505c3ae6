"""Spectral analysis of integer toral automorphisms and rate inequalities.

Every strict inequality is certified with an explicit margin: a row holds
only when its slack exceeds ``STRICT_MARGIN``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CentralAllUnit,
    InconsistentRates,
    MissingSplitting,
    NonUnimodular,
    NotAnosovBase,
    ParseError,
)

UNIT_TOL = 1e-10       # |log modulus| below this counts as a unit modulus
STRICT_MARGIN = 1e-12  # slack required for a strict inequality to hold
MAX_DIM = 64


def _int_det(rows: Sequence[Sequence[int]]) -> int:
    # Bareiss fraction-free elimination, exact on Python ints
    m = [list(r) for r in rows]
    n = len(m)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if m[k][k] == 0:
            for i in range(k + 1, n):
                if m[i][k] != 0:
                    m[k], m[i] = m[i], m[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def _charpoly(rows) -> list:
    """Integer characteristic polynomial, leading coefficient first (Faddeev-LeVerrier)."""
    n = len(rows)
    coeffs = [1]
    M = [[0] * n for _ in range(n)]
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{n-k+1} I ;  c_{n-k} = -tr(A M_k) / k, exact
        AM = [[sum(rows[i][t] * M[t][j] for t in range(n)) for j in range(n)] for i in range(n)]
        for i in range(n):
            AM[i][i] += coeffs[-1]
        M = AM
        tr = sum(sum(rows[i][t] * M[t][i] for t in range(n)) for i in range(n))
        coeffs.append(-tr // k)
    return coeffs


def _pnorm(p):
    while len(p) > 1 and p[0] == 0:
        p = p[1:]
    return p


def _pdivmod(a, b):
    a = [Fraction(v) for v in a]
    q = []
    while len(a) >= len(b):
        f = a[0] / b[0]
        q.append(f)
        for i in range(len(b)):
            a[i] -= f * b[i]
        a = a[1:]
    return q or [Fraction(0)], _pnorm(a or [Fraction(0)])


def _pgcd(a, b):
    a, b = _pnorm([Fraction(v) for v in a]), _pnorm([Fraction(v) for v in b])
    while any(b):
        a, b = b, _pdivmod(a, b)[1]
    return [v / a[0] for v in a]


def _pderiv(p):
    n = len(p) - 1
    return [c * (n - i) for i, c in enumerate(p[:-1])] or [Fraction(0)]


def _psub(a, b):
    n = max(len(a), len(b))
    a = [Fraction(0)] * (n - len(a)) + list(a)
    b = [Fraction(0)] * (n - len(b)) + list(b)
    return _pnorm([x - y for x, y in zip(a, b)])


def _squarefree_factors(p):
    """Yun's algorithm: [(q_i, i)] with p = prod q_i^i and each q_i square-free."""
    p = [Fraction(v) for v in p]
    dp = _pderiv(p)
    a0 = _pgcd(p, dp)
    b = _pdivmod(p, a0)[0]
    c = _pdivmod(dp, a0)[0]
    d = _psub(c, _pderiv(b))
    out, i = [], 1
    while len(b) > 1:
        a = _pgcd(b, d)
        b = _pdivmod(b, a)[0]
        c = _pdivmod(d, a)[0]
        d = _psub(c, _pderiv(b))
        if len(a) > 1:
            out.append((a, i))
        i += 1
    return out


def _int_matmul(a, b):
    n, p, q = len(a), len(b), len(b[0])
    return tuple(
        tuple(sum(a[i][t] * b[t][j] for t in range(p)) for j in range(q))
        for i in range(n)
    )


@dataclass(frozen=True)
class ToralAutomorphism:
    """Integer matrix with determinant +-1 acting on the d-torus."""

    entries: tuple

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in r) for r in self.entries)
        d = len(rows)
        if d == 0 or any(len(r) != d for r in rows):
            raise ValueError("matrix must be square and non-empty")
        if d > MAX_DIM:
            raise ValueError(f"dimension {d} exceeds {MAX_DIM}")
        object.__setattr__(self, "entries", rows)
        det = _int_det(rows)
        if abs(det) != 1:
            raise NonUnimodular(f"determinant {det} is not +-1")
        object.__setattr__(self, "_det", det)

    @classmethod
    def from_array(cls, a) -> "ToralAutomorphism":
        arr = np.asarray(a)
        if not np.all(arr == np.round(arr)):
            raise ValueError("entries must be integers")
        return cls(tuple(tuple(int(v) for v in row) for row in arr.tolist()))

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def det(self) -> int:
        return self._det

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    def inverse(self) -> "ToralAutomorphism":
        # adjugate / det, exact since det = +-1
        d = self.dim
        if d == 1:
            return ToralAutomorphism(((self.det,),))
        adj = [[0] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                minor = [
                    [self.entries[r][c] for c in range(d) if c != j]
                    for r in range(d) if r != i
                ]
                adj[j][i] = (-1) ** (i + j) * _int_det(minor)
        return ToralAutomorphism(tuple(tuple(v * self.det for v in r) for r in adj))

    def power(self, k: int) -> "ToralAutomorphism":
        if k < 0:
            return self.inverse().power(-k)
        d = self.dim
        result = tuple(tuple(int(i == j) for j in range(d)) for i in range(d))
        base = self.entries
        while k:
            if k & 1:
                result = _int_matmul(result, base)
            base = _int_matmul(base, base)
            k >>= 1
        return ToralAutomorphism(result)

    def __call__(self, y):
        """Apply to base points (last axis = coordinates), reduced mod 1."""
        y = np.asarray(y, dtype=float)
        return np.mod(y @ self.matrix.T, 1.0)

    def to_text(self) -> str:
        lines = [str(self.dim)]
        lines += [" ".join(str(v) for v in row) for row in self.entries]
        return "\n".join(lines) + "\n"


def parse_matrix_text(text: str, path=None) -> ToralAutomorphism:
    """Parse the plain matrix format: a line with d, then d rows of d ints."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("empty matrix file", line=1, column=1, path=path)
    head = lines[0]
    try:
        d = int(head.strip())
    except ValueError:
        raise ParseError(f"expected dimension, got {head!r}", line=1, column=1, path=path)
    if d < 1 or d > MAX_DIM:
        raise ParseError(f"dimension {d} out of range 1..{MAX_DIM}", line=1, column=1, path=path)
    body = lines[1:]
    # tolerate a single trailing blank line only
    while body and body[-1] == "":
        body.pop()
    if len(body) != d:
        raise ParseError(f"expected {d} matrix rows, found {len(body)}",
                         line=min(len(lines), d + 1) + (len(body) < d), column=1, path=path)
    rows = []
    for i, line in enumerate(body, start=2):
        toks = line.split(" ")
        if len(toks) != d:
            raise ParseError(f"expected {d} entries separated by single spaces",
                             line=i, column=1, path=path)
        row = []
        col = 1
        for tok in toks:
            try:
                if tok != tok.strip() or not tok:
                    raise ValueError
                row.append(int(tok))
            except ValueError:
                raise ParseError(f"bad integer {tok!r}", line=i, column=col, path=path)
            col += len(tok) + 1
        rows.append(tuple(row))
    try:
        return ToralAutomorphism(tuple(rows))
    except NonUnimodular as exc:
        raise ParseError(str(exc), line=1, column=1, path=path) from exc


def read_matrix_file(path) -> ToralAutomorphism:
    p = Path(path)
    return parse_matrix_text(p.read_text(), path=str(p))


def write_matrix_file(A: ToralAutomorphism, path) -> None:
    Path(path).write_text(A.to_text())


@dataclass(frozen=True)
class SpectralSummary:
    log_moduli: tuple
    b: int | None
    chi_bar: float | None
    chi_hat: float | None

    @classmethod
    def from_log_moduli(cls, values: Iterable[float]) -> "SpectralSummary":
        lm = tuple(sorted(float(v) for v in values))
        n = len(lm)
        b = sum(1 for v in lm if v < -UNIT_TOL)
        if b == 0:
            return cls(lm, None, None, None)
        return cls(lm, b, lm[n - b], lm[-1])

    @property
    def dim(self) -> int:
        return len(self.log_moduli)

    def power(self, k: int) -> "SpectralSummary":
        # log|lambda^k| = k log|lambda|; ordering is preserved for k > 0
        if k <= 0:
            raise ValueError("k must be positive")
        return SpectralSummary.from_log_moduli(k * v for v in self.log_moduli)


def integer_log_moduli(rows) -> list:
    """log|lambda| of an integer matrix, with multiplicity.

    Repeated eigenvalues (Jordan blocks) perturb floating-point eigenvalues by
    eps^(1/m), enough to push a unit modulus past UNIT_TOL.  The exact
    characteristic polynomial is split into square-free factors first, whose
    roots are simple and well conditioned.
    """
    out = []
    for q, mult in _squarefree_factors(_charpoly(rows)):
        roots = np.roots([float(v) for v in q])
        out.extend(float(v) for v in np.log(np.abs(roots)) for _ in range(mult))
    return out


def spectral_summary(A: ToralAutomorphism) -> SpectralSummary:
    if abs(A.det) != 1:
        raise NonUnimodular(f"determinant {A.det}")
    return SpectralSummary.from_log_moduli(integer_log_moduli(A.entries))


def check_anosov(A: ToralAutomorphism) -> bool:
    s = spectral_summary(A)
    return all(abs(v) > UNIT_TOL for v in s.log_moduli)


@dataclass(frozen=True)
class InequalityRow:
    """One strict inequality lhs < rhs, with margin = rhs - lhs."""

    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.margin > STRICT_MARGIN

    @property
    def verdict(self) -> str:
        return "pass" if self.holds else "fail"

    def record(self):
        return (self.name, self.lhs, self.rhs, self.margin, self.verdict)


def _lt(name, lhs, rhs) -> InequalityRow:
    return InequalityRow(name, float(lhs), float(rhs))


@dataclass(frozen=True)
class HyperbolicRates:
    chi_bar_s: float
    chi_bar_u: float
    chi_bar_c: float
    chi_hat_c: float
    chi_hat_s: float | None = None
    chi_hat_u: float | None = None
    ds_rates: tuple | None = None
    empirical: bool = False

    def __post_init__(self):
        if self.chi_hat_s is None:
            object.__setattr__(self, "chi_hat_s", self.chi_bar_s)
        if self.chi_hat_u is None:
            object.__setattr__(self, "chi_hat_u", self.chi_bar_u)
        if self.ds_rates is not None:
            object.__setattr__(self, "ds_rates",
                               tuple((float(a), float(b)) for a, b in self.ds_rates))
        for nm in ("chi_bar_s", "chi_bar_u", "chi_hat_s", "chi_hat_u"):
            if not getattr(self, nm) > 0:
                raise InconsistentRates(f"{nm} must be positive")
        if not (-self.chi_bar_s < self.chi_bar_c <= self.chi_hat_c < self.chi_bar_u):
            raise InconsistentRates("need -chi_bar_s < chi_bar_c <= chi_hat_c < chi_bar_u")
        for a, b in self.ds_rates or ():
            if not a < b:
                raise InconsistentRates(f"dominated pair ({a}, {b}) is not increasing")

    @property
    def chi_bar_su(self) -> float:
        return min(self.chi_bar_s, self.chi_bar_u)


def pinching_rows(r: HyperbolicRates, theta: float):
    return [
        _lt("pinching_s", -r.chi_bar_s + theta * r.chi_hat_u, r.chi_bar_c),
        _lt("pinching_u", r.chi_hat_c, r.chi_bar_u - theta * r.chi_hat_s),
    ]


def check_pinching(r: HyperbolicRates, theta: float) -> bool:
    return all(row.holds for row in pinching_rows(r, theta))


def center_bunching_rows(r: HyperbolicRates, l: int):
    if l < 1:
        raise ValueError("l must be a positive integer")
    rows = []
    for k in range(1, l + 1):
        rows.append(_lt(f"bunching_s_k{k}", -r.chi_bar_s - r.chi_bar_c + k * r.chi_hat_c, 0.0))
        rows.append(_lt(f"bunching_u_k{k}", -r.chi_bar_u + r.chi_hat_c - k * r.chi_bar_c, 0.0))
    return rows


def check_center_bunching(r: HyperbolicRates, l: int) -> bool:
    return all(row.holds for row in center_bunching_rows(r, l))


def ds_pinching_rows(r: HyperbolicRates, theta: float):
    if not r.ds_rates:
        raise MissingSplitting("dominated splitting rates are required")
    first, last = r.ds_rates[0], r.ds_rates[-1]
    gap = min(last[1] - last[0], first[1] - first[0])
    return [_lt("ds_pinching", max(r.chi_hat_u, r.chi_hat_s) * theta, gap)]


def check_ds_pinching(r: HyperbolicRates, theta: float) -> bool:
    return all(row.holds for row in ds_pinching_rows(r, theta))


@dataclass
class ClassReport:
    in_U1: bool
    in_U2: bool
    fiber_in_DS2: bool
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def records(self):
        return [row.record() for row in self.rows]


def _base_rates(base: SpectralSummary):
    if base.b is None or any(abs(v) <= UNIT_TOL for v in base.log_moduli):
        raise NotAnosovBase("base spectrum has unit moduli")
    chi_s = -base.log_moduli[base.b - 1]
    chi_u = base.chi_bar
    return chi_s, chi_u


def classify_skew_product(base: SpectralSummary, fiber: SpectralSummary,
                          ds: Sequence, l: int = 1) -> ClassReport:
    """Membership of a skew product in the two pinched classes.

    Base rates come from the base spectrum (weakest contraction and weakest
    expansion); centre rates are the extreme fiber log moduli.  ``ds`` lists
    the dominated-splitting pairs (chi_bar_i, chi_hat_i), lowest block first.
    """
    chi_s, chi_u = _base_rates(base)
    chi_su = min(chi_s, chi_u)
    cb, ch = fiber.log_moduli[0], fiber.log_moduli[-1]
    c = fiber.dim
    ds = [(float(a), float(b)) for a, b in ds]
    chain = [cb] + [v for pair in ds for v in pair] + [ch]
    # non-strict up to round-off: an isometric block is a legal (if useless) input
    if any(chain[i] > chain[i + 1] + UNIT_TOL for i in range(len(chain) - 1)):
        raise InconsistentRates(f"centre rates out of order: {chain}")

    rows = []
    notes = []
    bunch = _lt("bunching_su", -chi_su + ch - cb + max(ch, 0.0) + max(-cb, 0.0), 0.0)
    lhs1 = max(-cb, ch) * c / (c + 1)

    in_u1 = False
    if len(ds) == 2:
        if not 1 <= l <= c / 2:
            notes.append(f"l={l} outside [1, c/2]")
        gap = min(b - a for a, b in ds)
        r1 = _lt("spt1_1", lhs1, gap)
        r2 = InequalityRow("spt1_2", bunch.lhs, bunch.rhs)
        rows += [r1, r2]
        in_u1 = r1.holds and r2.holds and 1 <= l <= c / 2
    else:
        notes.append("U1 needs a three-block splitting (two pairs)")

    in_u2 = False
    if len(ds) == 1:
        a, b = ds[0]
        r1 = _lt("spt2_1", lhs1, b - a)
        r2 = _lt("spt2_2", ch + a - 2 * b, 0.0)
        r3 = InequalityRow("spt2_3", bunch.lhs, bunch.rhs)
        rows += [r1, r2, r3]
        in_u2 = r1.holds and r2.holds and r3.holds
    else:
        notes.append("U2 needs a two-block splitting (one pair)")

    in_ds2 = False
    if ds:
        a, b = ds[0]
        r = _lt("ds2_pinching_alike", a - 2 * b + ch, 0.0)
        rows.append(r)
        in_ds2 = r.holds
    return ClassReport(in_u1, in_u2, in_ds2, rows, notes)


def example_condition_rows(A: ToralAutomorphism, B: ToralAutomorphism, k: int):
    if k < 1:
        raise ValueError("k must be positive")
    sB = spectral_summary(B)
    if not check_anosov(B):
        raise NotAnosovBase("B is not Anosov")
    sA = spectral_summary(A)
    if sA.b is None:
        raise CentralAllUnit("A has only unit moduli")
    n = A.dim
    sBk = sB.power(k)
    rows = [
        _lt("affine_1", 4 * sA.chi_hat, sBk.chi_bar),
        _lt("affine_2", sA.chi_hat * n / (n + 1), sA.chi_bar),
        _lt("affine_3", sA.chi_hat, sBk.chi_bar - (n - 1) / n * sBk.chi_hat),
    ]
    reduced = _lt("reduced_sufficient", max(n, 4) * sA.chi_hat, sBk.chi_bar)
    return rows, reduced


def check_example_conditions(A: ToralAutomorphism, B: ToralAutomorphism, k: int) -> bool:
    rows, _ = example_condition_rows(A, B, k)
    return all(r.holds for r in rows)


def xi(r: HyperbolicRates) -> float:
    return min(r.chi_bar_c + r.chi_bar_s, r.chi_bar_u - r.chi_hat_c)


def rates_from_spectra(base: SpectralSummary, fiber: SpectralSummary, ds=None) -> HyperbolicRates:
    chi_s, chi_u = _base_rates(base)
    return HyperbolicRates(
        chi_bar_s=chi_s, chi_bar_u=chi_u,
        chi_hat_s=-base.log_moduli[0], chi_hat_u=base.log_moduli[-1],
        chi_bar_c=fiber.log_moduli[0], chi_hat_c=fiber.log_moduli[-1],
        ds_rates=ds,
    )


CAT = ToralAutomorphism(((2, 1), (1, 1)))
