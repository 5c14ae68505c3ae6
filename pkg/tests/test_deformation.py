import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phskew.deformation import (build_deformation, dictionary, fit_line, perturbed_skew,
                                verify_apriori, verify_linear_approx)
from phskew.errors import DegenerateFit, OverlappingSupports
from phskew.primitives import FiberMap, Translation
from phskew.skew import SkewProduct, build_loop_family, evaluate, leaf_geometry
from phskew.spectral import CAT


def _setup(sigma=0.02, size=2):
    fam = build_loop_family(CAT, (0.31, 0.57), sigma)
    loop = fam.loop(0.5 * fam.t_max)
    V = build_deformation([loop], sigma, size, C0=fam.C0)
    return fam, loop, V


def test_dictionary_is_divergence_free():
    fields = dictionary(2, 6)
    assert len(fields) == 6
    rng = np.random.default_rng(1)
    z = rng.uniform(0, 1, (20, 2))
    h = 1e-6
    for f in fields:
        div = 0.0
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            div = div + (f.value(None, z + e)[:, k] - f.value(None, z - e)[:, k]) / (2 * h)
        assert np.max(np.abs(div)) < 1e-8
    assert len(dictionary(2, 3, "sphere")) == 3
    with pytest.raises(ValueError):
        dictionary(2, 7)


@given(st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=25, deadline=None)
def test_deformation_is_linear_in_parameters(a, b):
    _, loop, V = _setup()
    rng = np.random.default_rng(3)
    y = np.mod(loop.y1 + rng.uniform(-0.002, 0.002, (10, 2)), 1.0)
    z = rng.uniform(0, 1, (10, 2))
    B1 = np.array([1.0, 0.0])
    B2 = np.array([0.3, -0.7])
    lhs = V.value(a * B1 + b * B2, y, z)
    rhs = a * V.value(B1, y, z) + b * V.value(B2, y, z)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_support_is_local(rng):
    _, loop, V = _setup()
    r = V.terms[0].profile.radius
    far = np.mod(loop.y1 + 3 * r * np.array([1.0, 0.0]), 1.0)
    z = rng.uniform(0, 1, (5, 2))
    assert np.all(V.value(np.ones(V.n_params), np.tile(far, (5, 1)), z) == 0.0)
    for nm in ("y", "y2", "y3"):
        assert np.all(V.value(np.ones(V.n_params), getattr(loop, nm)[None], z[:1]) == 0.0)


def test_supports_must_not_overlap():
    fam = build_loop_family(CAT, (0.31, 0.57), 0.02)
    l1 = fam.loop(0.5 * fam.t_max)
    l2 = fam.loop(0.5 * fam.t_max + 1e-4)
    with pytest.raises(OverlappingSupports):
        build_deformation([l1, l2], 0.02, 1, C0=fam.C0)


def test_zero_parameters_return_the_same_system(translation_skew):
    _, _, V = _setup()
    assert perturbed_skew(translation_skew, V, np.zeros(V.n_params)) is translation_skew


def test_perturbation_keeps_base_and_volume(translation_skew, rng):
    _, loop, V = _setup()
    Fb = perturbed_skew(translation_skew, V, np.array([0.3, -0.2]))
    assert Fb.volume_preserving
    y = np.mod(loop.y1 + rng.uniform(-0.003, 0.003, (50, 2)), 1.0)
    z = rng.uniform(0, 1, (50, 2))
    fy0, _ = evaluate(translation_skew, y, z)
    fy1, _ = evaluate(Fb, y, z)
    assert np.array_equal(fy0, fy1)      # fibers still map to fibers over f
    det = np.linalg.det(Fb.fiber_jac(y, z))
    assert np.max(np.abs(det - 1.0)) < 1e-8
    with pytest.raises(ValueError):
        perturbed_skew(translation_skew, V, np.array([2.0, 0.0]))


def test_zero_deformation_has_zero_residual(translation_skew):
    _, loop, V = _setup(size=0)
    rep = verify_linear_approx(translation_skew, V, loop, [0.2, 0.7])
    assert rep.residual == 0.0


def test_decoupled_translation_is_linear(rng):
    F = SkewProduct(CAT, FiberMap((Translation((0.1234, 0.0567)),), "torus", 2))
    _, loop, V = _setup()
    rep = verify_linear_approx(F, V, loop, [0.2, 0.7])
    assert rep.residual < 1e-7
    # the pushed vector of a constant dictionary field is the field itself
    assert np.allclose(rep.predicted[0], [1.0, 0.0], atol=1e-7)


def test_apriori_zero_deformation(translation_skew):
    _, loop, V = _setup(size=0)
    e = leaf_geometry(CAT).Eu[:, 0]
    rep = verify_apriori(translation_skew, V, loop.y, np.mod(loop.y + 0.01 * e, 1), [[0.1, 0.1]])
    assert rep.sup_derivative == 0.0 and rep.ratio_ok


def test_fit_line_exact_and_degenerate():
    a, b, r2 = fit_line([1, 2, 3, 4], [3, 1, -1, -3])
    assert a == pytest.approx(-2) and b == pytest.approx(5) and r2 == pytest.approx(1)
    with pytest.raises(DegenerateFit):
        fit_line([1, 1], [0, 1])
