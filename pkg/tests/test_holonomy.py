import numpy as np
import pytest

from phskew.errors import NoConvergence, NotOnStableLeaf, NotOnUnstableLeaf
from phskew.holonomy import (holonomy_jacobian, loop_holonomy, phi_map, stable_holonomy,
                             truncation_profile, unstable_holonomy)
from phskew.skew import build_loop_family, degenerate_loop, leaf_geometry
from phskew.spectral import CAT

from oracles.translation_series import holonomy_shift

Y1 = np.array([0.3, 0.4])


def _eu():
    return leaf_geometry(CAT).Eu[:, 0]


def _es():
    return leaf_geometry(CAT).Es[:, 0]


def _sign_fix(e, ref):
    return e if e @ np.asarray(ref) > 0 else -e


def test_decoupled_holonomies_are_identity(decoupled, rng):
    z = rng.uniform(0, 1, (200, 2))
    for kind, fn, e in (("u", unstable_holonomy, _eu()), ("s", stable_holonomy, _es())):
        y1 = rng.uniform(0, 1, (200, 2))
        y2 = np.mod(y1 + rng.uniform(-0.05, 0.05, (200, 1)) * e, 1.0)
        r = fn(decoupled, y1, y2, z)
        assert np.max(np.abs(decoupled.fiber.diff(r.z, z))) < 1e-10


@pytest.mark.parametrize("kind", ["u", "s"])
@pytest.mark.parametrize("offset", [0.01, -0.03, 0.07])
def test_translation_holonomy_matches_series(translation_skew, kind, offset):
    # the oracle uses e_u = (phi, 1)/n and e_s = (-1, phi)/n
    e = _sign_fix(_eu(), [1.0, 0.6]) if kind == "u" else _sign_fix(_es(), [-0.6, 1.0])
    y2 = np.mod(Y1 + offset * e, 1.0)
    z = np.array([0.1, 0.2])
    fn = unstable_holonomy if kind == "u" else stable_holonomy
    r = fn(translation_skew, Y1, y2, z, tol=1e-12)
    shift = holonomy_shift(Y1, offset, kind, 0.3, 0.2)
    want = np.mod(z + np.array([shift, 0.0]), 1.0)
    assert np.max(np.abs(translation_skew.fiber.diff(r.z, want[None]))) < 1e-8


def test_holonomy_inverse_pair(translation_skew, rng):
    e = _eu()
    y2 = np.mod(Y1 + 0.02 * e, 1.0)
    z = rng.uniform(0, 1, (20, 2))
    there = unstable_holonomy(translation_skew, Y1, y2, z).z
    back = unstable_holonomy(translation_skew, y2, Y1, there).z
    assert np.max(np.abs(translation_skew.fiber.diff(back, z))) < 1e-9


def test_holonomy_composes_along_leaf(translation_skew):
    e = _eu()
    y2 = np.mod(Y1 + 0.02 * e, 1.0)
    y3 = np.mod(Y1 + 0.05 * e, 1.0)
    z = np.array([[0.4, 0.9]])
    two = unstable_holonomy(translation_skew, y2, y3,
                            unstable_holonomy(translation_skew, Y1, y2, z).z).z
    one = unstable_holonomy(translation_skew, Y1, y3, z).z
    assert np.max(np.abs(translation_skew.fiber.diff(one, two))) < 1e-9


def test_off_leaf_pairs_are_rejected(translation_skew):
    y2 = np.mod(Y1 + 0.02 * _es(), 1.0)
    with pytest.raises(NotOnUnstableLeaf):
        unstable_holonomy(translation_skew, Y1, y2, [0, 0])
    y2 = np.mod(Y1 + 0.02 * _eu(), 1.0)
    with pytest.raises(NotOnStableLeaf):
        stable_holonomy(translation_skew, Y1, y2, [0, 0])


def test_depth_cap_raises(translation_skew):
    y2 = np.mod(Y1 + 0.05 * _eu(), 1.0)
    with pytest.raises(NoConvergence):
        unstable_holonomy(translation_skew, Y1, y2, [0, 0], tol=1e-30, max_depth=20)


def test_degenerate_loop_is_identity(translation_skew, rng):
    z = rng.uniform(0, 1, (10, 2))
    r = loop_holonomy(translation_skew, degenerate_loop(Y1), z)
    assert np.max(np.abs(translation_skew.fiber.diff(r.z, z))) < 1e-12


def test_loop_holonomy_of_decoupled_is_identity(decoupled, rng):
    fam = build_loop_family(CAT, (0.31, 0.57), 0.02)
    z = rng.uniform(0, 1, (10, 2))
    r = loop_holonomy(decoupled, fam.loop(0.5 * fam.t_max), z)
    assert np.max(np.abs(decoupled.fiber.diff(r.z, z))) < 1e-10


def test_translation_loop_matches_leg_series(translation_skew):
    fam = build_loop_family(CAT, (0.31, 0.57), 0.02)
    loop = fam.loop(0.4 * fam.t_max)
    z = np.array([0.25, 0.5])
    total = 0.0
    for kind, a, b in loop.legs():
        d = np.mod(b - a + 0.5, 1.0) - 0.5
        e = _sign_fix(_eu(), [1.0, 0.6]) if kind == "u" else _sign_fix(_es(), [-0.6, 1.0])
        off = float(d @ e)      # cat is symmetric, so E^u and E^s are orthogonal
        total += holonomy_shift(a, off, kind, 0.3, 0.2)
    r = loop_holonomy(translation_skew, loop, z, tol=1e-12)
    want = np.mod(z + [total, 0.0], 1.0)
    assert np.max(np.abs(translation_skew.fiber.diff(r.z, want[None]))) < 1e-8


def test_phi_map_hook_and_shape(translation_skew):
    fam = build_loop_family(CAT, (0.31, 0.57), 0.02)
    s = np.array([[0.0, 0.5], [1.0, -0.5]])
    r = phi_map(translation_skew, fam, [0.1, 0.1], s)
    assert r.z.shape == (2, 2)
    h = phi_map(translation_skew, fam, [0.1, 0.1], s, hook=lambda q: q * 2)
    assert np.allclose(h.z, s * 2)


def test_jacobian_of_translation_holonomy_is_identity(translation_skew):
    y2 = np.mod(Y1 + 0.02 * _eu(), 1.0)
    J = holonomy_jacobian(translation_skew, "u", (Y1, y2), np.array([0.3, 0.3]))
    assert np.allclose(J, np.eye(2), atol=1e-8)


def test_jacobian_of_shear_holonomy_is_unimodular(shear_skew):
    g = leaf_geometry(shear_skew.base)
    y2 = np.mod(Y1 + 0.01 * g.Eu[:, 0], 1.0)
    J = holonomy_jacobian(shear_skew, "u", (Y1, y2), np.array([0.3, 0.7]))
    assert abs(np.linalg.det(J) - 1.0) < 1e-6


def test_truncation_error_decays_geometrically(translation_skew):
    y2 = np.mod(Y1 + 0.05 * _eu(), 1.0)
    err = truncation_profile(translation_skew, Y1, y2, [[0.2, 0.2]], "u", range(0, 12))
    keep = err > 1e-14
    slope = np.polyfit(np.arange(12)[keep], np.log(err[keep]), 1)[0]
    # backward iterates contract the unstable offset by the golden ratio squared
    assert slope < -0.9
