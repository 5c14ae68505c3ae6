import itertools
import json
import math
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from scipy.stats import chisquare

from phskew.deformation import fit_line
from phskew.errors import DegenerateFit, DimMismatch, GridTooFine
from phskew.grassmann import GrassmannPoint, orthonormalize, principal_angle, span
from phskew.ifs import (IFSSpec, UniformityCertificate, UniformityRefusal,
                        build_conjugated_family, certify_uniformity, estimate_C, estimate_D,
                        lyapunov_spectrum, measure_nontransversality, moment_decay_check,
                        orbit_density, sample_word)
from phskew.primitives import (FiberMap, SphereRotation, SphereTwist, Translation,
                               identity_map, linear_map, rotation2)

ORACLE = Path(__file__).parent / "oracles" / "conjugated_family.json"

DIAG = np.diag([1 / 3, 3.0])
ROT = rotation2(math.pi / 2)
SHEAR = np.array([[1.0, 0.5], [0.0, 1.0]])


def euclid(*ms, seed=0):
    return IFSSpec(tuple(linear_map(m, euclidean=True) for m in ms), "euclidean", len(ms[0]), seed)


def enum_oracle(mats, e_frame, n, dps=40):
    """Exact expectations over all k^n words, in 40-digit arithmetic."""
    d, l = e_frame.shape
    C, D = [], []
    with mp.workdps(dps):
        Ms = [mp.matrix(m.tolist()) for m in mats]
        Ef = mp.matrix(e_frame.tolist())
        Qe, _ = mp.qr(Ef, mode="full")
        for w in itertools.product(range(len(mats)), repeat=n):
            A = mp.eye(d)
            for i in w:
                A = Ms[i] * A
            AE = A * Ef
            Q, _ = mp.qr(AE, mode="full")
            comp = Q[:, l:].T * A * Qe[:, l:]
            C.append(mp.log(max(mp.svd_r(comp, compute_uv=False))))
            D.append(mp.log(min(mp.svd_r(AE, compute_uv=False))))
        return float(mp.fsum(C) / len(C)), float(mp.fsum(D) / len(D))


# ---------------------------------------------------------------- words

def test_sample_word_determinism_and_range():
    spec = euclid(DIAG, ROT, SHEAR, seed=7)
    a = sample_word(spec, 500, 3)
    assert np.array_equal(a, sample_word(spec, 500, 3))
    assert not np.array_equal(a, sample_word(spec, 500, 4))
    assert a.min() >= 1 and a.max() <= 3
    assert np.all(sample_word(euclid(DIAG), 20) == 1)


def test_sample_word_uniform_marginals():
    w = sample_word(euclid(DIAG, ROT, seed=1), 10**5)
    assert 0.495 <= np.mean(w == 1) <= 0.505
    w3 = sample_word(euclid(DIAG, ROT, SHEAR, seed=2), 10**5)
    assert chisquare(np.bincount(w3)[1:]).pvalue > 1e-3


# --------------------------------------------------------- C and D values

def test_reference_values():
    e2 = span([0, 1])
    s1 = euclid(DIAG)
    assert tuple(estimate_C(s1, [0, 0], e2, 2)) == pytest.approx((2 * math.log(1 / 3), 0.0), abs=1e-12)
    assert tuple(estimate_D(s1, [0, 0], e2, 2)) == pytest.approx((2 * math.log(3), 0.0), abs=1e-12)
    s2 = euclid(DIAG, ROT)
    assert estimate_C(s2, [0, 0], e2, 1).mean == pytest.approx(math.log(1 / 3) / 2, abs=1e-12)
    assert estimate_D(s2, [0, 0], e2, 1).mean == pytest.approx(math.log(3) / 2, abs=1e-12)
    rots = euclid(ROT, rotation2(0.3))
    assert tuple(estimate_C(rots, [0, 0], span([1, 2]), 4)) == pytest.approx((0, 0), abs=1e-12)
    assert tuple(estimate_D(rots, [0, 0], span([1, 2]), 4)) == pytest.approx((0, 0), abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("n", [1, 3, 6])
def test_enumeration_matches_oracle_2d(k, n):
    mats = [DIAG, ROT, SHEAR][:k]
    spec = euclid(*mats)
    for v in ([1, 0], [1, 1], [0.3, -2.0]):
        E = span(v)
        c, d = enum_oracle(mats, E.frame, n)
        ce = estimate_C(spec, [0, 0], E, n)
        de = estimate_D(spec, [0, 0], E, n)
        assert ce.exact and de.exact
        assert abs(ce.mean - c) < 1e-12 and abs(de.mean - d) < 1e-12


@pytest.mark.parametrize("l", [1, 2])
def test_enumeration_matches_oracle_3d(l, rng):
    mats = [np.array([[2.0, 1, 0], [1, 1, 0], [0, 0, 1]]),
            Rotation.from_rotvec([0.2, 0.5, -0.4]).as_matrix(),
            np.diag([0.5, 1.0, 2.0])]
    spec = euclid(*mats)
    E = orthonormalize(rng.standard_normal((3, l)))
    c, d = enum_oracle(mats, E.frame, 4)
    assert abs(estimate_C(spec, [0, 0, 0], E, 4).mean - c) < 1e-12
    assert abs(estimate_D(spec, [0, 0, 0], E, 4).mean - d) < 1e-12


def test_monte_carlo_within_four_standard_errors():
    spec = euclid(DIAG, ROT, SHEAR, seed=5)
    E = span([1, 1])
    for fn in (estimate_C, estimate_D):
        exact = fn(spec, [0, 0], E, 6, mode="enumerate")
        mc = fn(spec, [0, 0], E, 6, samples=10**4, mode="mc")
        assert not mc.exact and mc.stderr > 0
        assert abs(mc.mean - exact.mean) < 4 * mc.stderr


def test_subadditivity_single_map():
    A = np.array([[2.0, 1.0], [1.0, 1.0]]) @ SHEAR
    spec = euclid(A)
    E = span([0.4, 1.0])
    for m, n in ((1, 2), (2, 3), (3, 1)):
        pushed = GrassmannPoint(orthonormalize(np.linalg.matrix_power(A, m) @ E.frame).frame)
        lhs = estimate_C(spec, [0, 0], E, m + n).mean
        rhs = estimate_C(spec, [0, 0], E, m).mean + estimate_C(spec, [0, 0], pushed, n).mean
        assert lhs <= rhs + 1e-12


def test_dimension_mismatch():
    with pytest.raises(DimMismatch):
        estimate_C(euclid(DIAG), [0, 0], span([1, 0, 0]), 2)


# ----------------------------------------------------------- certificates

def test_single_hyperbolic_map_refused_at_expanding_complement():
    r = certify_uniformity(euclid(DIAG), 1, 1)
    assert isinstance(r, UniformityRefusal)
    assert r.reason == "C not negative"
    assert principal_angle(r.E, span([1, 0])) < 1e-6
    assert r.value == pytest.approx(math.log(3), abs=1e-9)


def test_rotation_family_refused():
    r = certify_uniformity(euclid(ROT, rotation2(1.0)), 1, 2)
    assert isinstance(r, UniformityRefusal)
    assert r.C_max == pytest.approx(0.0, abs=1e-12)
    m = moment_decay_check(euclid(ROT, rotation2(1.0)), 1, 0.5, [2, 4])
    assert not m.passed and m.refusal


def test_grid_refinement_keeps_refusal():
    spec = euclid(DIAG)
    for res in (4, 16, 64):
        assert isinstance(certify_uniformity(spec, 1, 1, grid=(1, res)), UniformityRefusal)


def test_conjugated_family_composition():
    g = linear_map(DIAG, euclidean=True)
    h = linear_map(rotation2(math.pi / 4), euclidean=True)
    fam = build_conjugated_family(g, [h], 2)
    g2 = np.linalg.matrix_power(DIAG, 2)
    want = g2 @ rotation2(math.pi / 4) @ np.linalg.inv(g2)
    J = fam.tangent_jac(1, np.zeros((1, 2)))[0]
    assert np.max(np.abs(J - want)) < 1e-12
    dup = build_conjugated_family(g, [h], 0)
    assert np.allclose(dup.tangent_jac(0, np.zeros((1, 2))), dup.tangent_jac(1, np.zeros((1, 2))))
    ident = build_conjugated_family(g, [identity_map(2, "euclidean")], 3)
    assert np.allclose(ident.tangent_jac(1, np.zeros((1, 2)))[0], np.eye(2))


def _cat_family(K):
    g = linear_map([[2, 1], [1, 1]])
    hs = [linear_map([[1, 1], [0, 1]]), linear_map([[1, 0], [1, 1]])]
    return build_conjugated_family(g, hs, K, seed=11)


def test_conjugated_family_matches_recorded_oracle():
    oracle = json.loads(ORACLE.read_text())
    n0 = oracle["n0"]
    kappas = []
    for K, ref in sorted(oracle["K"].items(), key=lambda kv: int(kv[0])):
        cert = certify_uniformity(_cat_family(int(K)), 1, n0)
        assert isinstance(cert, UniformityCertificate)
        assert cert.exact and cert.kappa2 < cert.kappa1
        # the extremum at K = 8 is narrower than double-precision angle resolution
        tol = 1e-9 if int(K) <= 4 else 5e-5
        assert abs(cert.kappa1 - ref["kappa1"]) < tol
        kappas.append((int(K), cert.kappa1))
    ks, vals = zip(*kappas)
    assert all(a < b for a, b in zip(vals, vals[1:]))
    slope, _, _ = fit_line(ks, vals)
    assert slope > 0


def test_moment_decay_on_certified_family():
    spec = _cat_family(4)
    rep = moment_decay_check(spec, 1, 0.5, [2, 4, 6], n0=2)
    assert rep.passed, rep
    with pytest.raises(DegenerateFit):
        moment_decay_check(spec, 1, 0.5, [3])


# ------------------------------------------------------------- Lyapunov

def test_cat_lyapunov():
    cat = IFSSpec((linear_map([[2, 1], [1, 1]]),), "torus", 2)
    lam = lyapunov_spectrum(cat, [0.1, 0.2], 10**5)
    ref = math.log((3 + math.sqrt(5)) / 2)
    assert np.allclose(lam, [-ref, ref], atol=1e-3)


def test_rotation_lyapunov_zero():
    lam = lyapunov_spectrum(euclid(ROT, rotation2(0.4)), [0, 0], 10**4)
    assert np.allclose(lam, 0.0, atol=1e-3)


@pytest.mark.parametrize("spec", [_cat_family(2), None], ids=["conjugated", "sphere"])
def test_volume_preserving_sum_rule(spec):
    if spec is None:
        spec = _sphere_ifs()
        x = [0.0, 0.0, 1.0]
    else:
        x = [0.1, 0.2]
    assert abs(np.sum(lyapunov_spectrum(spec, x, 10**4))) < 1e-3


def test_lyapunov_needs_long_word():
    with pytest.raises(ValueError):
        lyapunov_spectrum(euclid(DIAG), [0, 0], 10)


# ---------------------------------------------------- nontransversality

def test_eta_trivial_cases():
    ident = IFSSpec((identity_map(2, "euclidean"),), "euclidean", 2)
    P = span([1, 0])
    rep = measure_nontransversality(ident, P, 1, grid=(1, 8))
    assert rep.eta_hat == 1.0        # the grid contains span(e1) itself
    assert principal_angle(rep.witness[1], P) < 1e-12


def test_eta_rotation_family_brute_force():
    angles = [0.0, math.pi / 2, math.pi / 3]
    spec = euclid(*[rotation2(a) for a in angles])
    P = span([1, 0])
    rep = measure_nontransversality(spec, P, 1, grid=(1, 12))
    best = 0.0
    for j in range(12):
        t = math.pi * j / 12
        bad = sum(1 for a in angles if min(abs((t + a) % math.pi), math.pi - abs((t + a) % math.pi)) <= 1e-3)
        best = max(best, bad / len(angles))
    assert rep.eta_hat == pytest.approx(best)


# ------------------------------------------------------------- density

def _sphere_ifs():
    R1 = Rotation.from_rotvec([0, 0, 1.0]).as_matrix()
    R2 = Rotation.from_rotvec([1.0, 0, 0]).as_matrix()
    tw = SphereTwist((0, 0, 1.0), (1.0, 0, 0), (0, 1.0, 0), 0.3)
    return IFSSpec((FiberMap((SphereRotation(R1), tw), "sphere", 2),
                    FiberMap((SphereRotation(R2),), "sphere", 2)), "sphere", 2, seed=1)


def test_rational_rotation_finite_orbit():
    spec = IFSSpec((FiberMap((Translation((0.25,)),), "torus", 1),), "torus", 1)
    r = orbit_density(spec, [0.01], 1000, 0.01)
    assert r.cells_visited == 4
    assert r.coverage == pytest.approx(4 * 0.01 * 2)


def test_identity_visits_one_cell():
    spec = IFSSpec((identity_map(2),), "torus", 2)
    r = orbit_density(spec, [0.3, 0.3], 100, 0.05)
    assert r.cells_visited == 1


def test_irrational_translation_equidistributes():
    spec = IFSSpec((FiberMap((Translation((math.sqrt(2) - 1,)),), "torus", 1),), "torus", 1)
    r = orbit_density(spec, [0.0], 10**4, 1e-3)
    assert r.coverage == 1.0 and r.largest_empty_radius == 0.0


def test_python_and_numba_paths_agree():
    spec = _sphere_ifs()
    a = orbit_density(spec, [0, 0, 1.0], 3000, 0.05, use_kernel=False)
    b = orbit_density(spec, [0, 0, 1.0], 3000, 0.05)
    assert a.cells_visited == b.cells_visited
    # the twist makes the orbit mildly chaotic, so round-off differences grow
    # at the top Lyapunov rate; compare points on a shorter orbit
    a = orbit_density(spec, [0, 0, 1.0], 500, 0.05, use_kernel=False)
    b = orbit_density(spec, [0, 0, 1.0], 500, 0.05)
    assert np.allclose(a.final_point, b.final_point, atol=1e-12)
    tr = IFSSpec((FiberMap((Translation((0.1234, 0.5678)),), "torus", 2),), "torus", 2, seed=3)
    a = orbit_density(tr, [0, 0], 5000, 0.02, use_kernel=False)
    b = orbit_density(tr, [0, 0], 5000, 0.02)
    assert a.cells_visited == b.cells_visited
    assert np.array_equal(a.hist_counts, b.hist_counts)


def test_grid_too_fine():
    spec = IFSSpec((identity_map(2),), "torus", 2)
    with pytest.raises(GridTooFine):
        orbit_density(spec, [0, 0], 10, 1e-5)
