import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phskew.errors import DimMismatch, RankDeficient, Singular
from phskew.grassmann import (GrassmannPoint, TangentMap, compressed_complement_map,
                              lift_tangent_action, orthonormalize, principal_angle,
                              principal_angle_max, project_complement, pushforward,
                              random_subspace, span, step_C, step_D)

finite = st.floats(-3, 3, allow_nan=False)


def well_conditioned(m):
    s = np.linalg.svd(m, compute_uv=False)
    return s[-1] > 1e-2 * max(s[0], 1e-300)


@given(arrays(float, (4, 2), elements=finite).filter(well_conditioned))
def test_orthonormalize_spans_input(a):
    E = orthonormalize(a)
    assert np.allclose(E.frame.T @ E.frame, np.eye(2), atol=1e-12)
    # input columns lie in the span
    assert np.allclose(project_complement(E, a), 0.0, atol=1e-10)


@given(arrays(float, (3, 2), elements=finite).filter(well_conditioned),
       arrays(float, (2, 2), elements=finite).filter(well_conditioned))
def test_change_of_basis_gives_same_point(a, g):
    assert orthonormalize(a).same_subspace(orthonormalize(a @ g), tol=1e-7)


@pytest.mark.parametrize("t", [1e-12, 1e-6, 0.3, 1.2, np.pi / 2])
def test_principal_angle_between_lines(t):
    E = span([1.0, 0.0])
    F = span([np.cos(t), np.sin(t)])
    assert principal_angle(E, F) == pytest.approx(t, rel=1e-9, abs=1e-15)
    assert principal_angle_max(E, F) == pytest.approx(t, rel=1e-9, abs=1e-15)


def test_principal_angle_mixed_dimensions():
    plane = span([1, 0, 0], [0, 1, 0])
    line = span([0, 1, 1])
    assert principal_angle(plane, line) == pytest.approx(np.pi / 4)
    assert principal_angle(line, plane) == pytest.approx(np.pi / 4)


def test_complement_and_projector():
    rng = np.random.default_rng(3)
    E = random_subspace(5, 2, rng)
    N = E.complement()
    assert N.l == 3
    assert np.allclose(E.frame.T @ N.frame, 0.0, atol=1e-12)
    P = E.projector()
    assert np.allclose(P @ P, P)
    assert np.allclose(P + N.projector(), np.eye(5), atol=1e-12)


def test_diagonal_step_integrands():
    Df = np.diag([0.5, 4.0])
    E = span([1.0, 0.0])
    assert step_D(Df, E) == pytest.approx(np.log(0.5))
    assert step_C(Df, E) == pytest.approx(np.log(4.0))
    assert pushforward(Df, E).same_subspace(E)


@given(arrays(float, (2, 2), elements=finite).filter(well_conditioned), st.floats(0, np.pi))
@settings(max_examples=80)
def test_planar_C_identity(Df, t):
    # in the plane, the compressed complement map has norm |det Df| / |Df e|
    e = np.array([np.cos(t), np.sin(t)])
    E = span(e)
    expect = np.log(abs(np.linalg.det(Df))) - np.log(np.linalg.norm(Df @ e))
    assert step_C(Df, E) == pytest.approx(expect, abs=1e-9)
    assert step_D(Df, E) == pytest.approx(np.log(np.linalg.norm(Df @ e)), abs=1e-9)


def test_compressed_map_shapes():
    rng = np.random.default_rng(1)
    Df = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    E = random_subspace(4, 1, rng)
    m, img = compressed_complement_map(Df, E)
    assert m.shape == (3, 3)
    assert img.same_subspace(orthonormalize(Df @ E.frame))


def test_lift_tangent_action_matches_finite_difference():
    rng = np.random.default_rng(7)
    Df = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    E = random_subspace(3, 1, rng)
    phi = TangentMap(rng.standard_normal((2, 1)), E)
    psi = lift_tangent_action(Df, E, phi)
    # curve E_t = graph of t*phi over E, pushed forward, read as a graph over Df E
    h = 1e-6
    img = pushforward(Df, E)

    def graph(t):
        Et = orthonormalize(E.frame + t * phi.ambient() @ E.frame)
        Ft = pushforward(Df, Et).frame
        # express Ft as the graph {u + A u : u in img}
        base = img.frame.T @ Ft
        return psi.N.T @ Ft @ np.linalg.inv(base)

    fd = (graph(h) - graph(-h)) / (2 * h)
    assert np.allclose(fd, psi.phi, atol=1e-6)


def test_errors():
    with pytest.raises(RankDeficient):
        orthonormalize([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(DimMismatch):
        principal_angle(span([1, 0]), span([1, 0, 0]))
    with pytest.raises(Singular):
        step_C(np.zeros((2, 2)), span([1, 0]))
    with pytest.raises(ValueError):
        GrassmannPoint(np.array([[1.0, 1.0], [0.0, 1.0]]))
