import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phskew.errors import (CentralAllUnit, InconsistentRates, MissingSplitting,
                           NonUnimodular, NotAnosovBase, ParseError)
from phskew.spectral import (CAT, HyperbolicRates, SpectralSummary, ToralAutomorphism,
                             center_bunching_rows, check_anosov, check_center_bunching,
                             check_ds_pinching, check_example_conditions, check_pinching,
                             classify_skew_product, ds_pinching_rows, example_condition_rows,
                             parse_matrix_text, rates_from_spectra, read_matrix_file,
                             spectral_summary, write_matrix_file, xi)


def cat_log_modulus():
    # log of the golden ratio squared, to 50 digits
    mp.mp.dps = 50
    return float(mp.log((3 + mp.sqrt(5)) / 2))


def test_cat_summary_matches_high_precision():
    s = spectral_summary(CAT)
    lam = cat_log_modulus()
    assert s.b == 1
    assert s.log_moduli[0] == pytest.approx(-lam, abs=1e-14)
    assert s.log_moduli[1] == pytest.approx(lam, abs=1e-14)
    assert s.chi_bar == s.chi_hat == pytest.approx(lam, abs=1e-14)


def test_example_conditions_threshold_is_five():
    # binding row: 4 * log(phi^2) < k * log(phi^2)  <=>  k > 4
    flips = [check_example_conditions(CAT, CAT, k) for k in range(1, 9)]
    assert flips == [False] * 4 + [True] * 4
    rows, reduced = example_condition_rows(CAT, CAT, 5)
    lam = cat_log_modulus()
    assert rows[0].lhs == pytest.approx(4 * lam)
    assert rows[0].rhs == pytest.approx(5 * lam)
    assert reduced.holds


def test_example_conditions_refuse_unit_centre():
    with pytest.raises(CentralAllUnit):
        example_condition_rows(ToralAutomorphism(((1, 1), (0, 1))), CAT, 5)
    with pytest.raises(NotAnosovBase):
        example_condition_rows(CAT, ToralAutomorphism(((1, 1), (0, 1))), 5)


def test_nonunimodular_rejected():
    with pytest.raises(NonUnimodular):
        ToralAutomorphism(((2, 0), (0, 1)))


def test_anosov_detection():
    assert check_anosov(CAT)
    assert not check_anosov(ToralAutomorphism(((1, 1), (0, 1))))
    assert not check_anosov(ToralAutomorphism(((0, -1), (1, 0))))


def test_inverse_and_power_are_exact():
    inv = CAT.inverse()
    assert np.array_equal(inv.matrix @ CAT.matrix, np.eye(2))
    assert CAT.power(5).entries == ((89, 55), (55, 34))
    assert CAT.power(-2).entries == inv.power(2).entries


def test_matrix_text_round_trip(tmp_path):
    p = tmp_path / "m.txt"
    write_matrix_file(CAT, p)
    assert read_matrix_file(p) == CAT


@pytest.mark.parametrize("text,line,col", [
    ("", 1, 1),
    ("x\n1 0\n0 1\n", 1, 1),
    ("2\n1 0\n", 3, 1),
    ("2\n1 0\n0 q\n", 3, 3),
    ("2\n1  0\n0 1\n", 2, 1),
    ("2\n2 0\n0 1\n", 1, 1),
])
def test_matrix_parse_errors_carry_position(text, line, col):
    with pytest.raises(ParseError) as ei:
        parse_matrix_text(text, path="m.txt")
    assert (ei.value.line, ei.value.column) == (line, col)


def _completes(t):
    a, b, c = t
    return a != 0 and any((b * c + s) % a == 0 for s in (1, -1))


@given(st.tuples(st.integers(-6, 6), st.integers(-6, 6), st.integers(-6, 6)).filter(_completes))
@settings(max_examples=80, deadline=None)
def test_spectrum_of_power_scales(t):
    a, b, c = t
    d = next((b * c + s) // a for s in (1, -1) if (b * c + s) % a == 0)
    A = ToralAutomorphism(((a, b), (c, d)))
    s = spectral_summary(A)
    s3 = spectral_summary(A.power(3))
    assert np.allclose(s3.log_moduli, 3 * np.asarray(s.log_moduli), atol=1e-8)
    # log moduli sum to log|det| = 0
    assert abs(sum(s.log_moduli)) < 1e-9
    # x^2 - t x + det: hyperbolic iff |t| > 2 (det = 1) or t != 0 (det = -1)
    t_ = a + d
    assert check_anosov(A) == (abs(t_) > 2 if A.det == 1 else t_ != 0)


def test_parabolic_matrix_is_not_anosov():
    # Jordan block at -1: floating-point eigenvalues miss the unit circle by ~1e-8
    A = ToralAutomorphism(((1, -1), (4, -3)))
    assert spectral_summary(A).log_moduli == (0.0, 0.0)
    assert not check_anosov(A)


def test_block_diagonal_multiplicities():
    A = ToralAutomorphism(((2, 1, 0, 0), (1, 1, 0, 0), (0, 0, 2, 1), (0, 0, 1, 1)))
    s = spectral_summary(A)
    assert s.b == 2
    assert np.allclose(s.log_moduli, [-cat_log_modulus()] * 2 + [cat_log_modulus()] * 2)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.integers(1, 5))
def test_summary_power_is_scaling(vals, k):
    s = SpectralSummary.from_log_moduli(vals)
    p = s.power(k)
    assert np.allclose(p.log_moduli, [k * v for v in s.log_moduli])


def test_rates_validation():
    with pytest.raises(InconsistentRates):
        HyperbolicRates(1.0, 1.0, 0.5, 0.2)
    with pytest.raises(InconsistentRates):
        HyperbolicRates(-1.0, 1.0, 0.0, 0.0)
    with pytest.raises(InconsistentRates):
        HyperbolicRates(1.0, 1.0, -0.1, 0.1, ds_rates=((0.1, 0.0),))


def test_pinching_and_bunching_formulas():
    r2 = HyperbolicRates(chi_bar_s=2.0, chi_bar_u=2.0, chi_bar_c=-0.1, chi_hat_c=0.1)
    # theta = 1: -2 + 2 < -0.1 fails; theta = 1/2: -1 < -0.1 and 0.1 < 1 hold
    assert not check_pinching(r2, 1.0)
    assert check_pinching(r2, 0.5)
    rows = center_bunching_rows(r2, 2)
    assert rows[0].lhs == pytest.approx(-2.0 + 0.1 + 0.1)
    assert rows[3].lhs == pytest.approx(-2.0 + 0.1 + 0.2)
    assert check_center_bunching(r2, 2)
    with pytest.raises(MissingSplitting):
        ds_pinching_rows(r2, 0.5)
    r3 = HyperbolicRates(2.0, 2.0, -0.5, 0.5, ds_rates=((-0.4, 0.4),))
    assert ds_pinching_rows(r3, 0.25)[0].lhs == pytest.approx(0.5)
    assert check_ds_pinching(r3, 0.25)
    assert not check_ds_pinching(r3, 0.5)


def test_xi_and_rates_from_spectra():
    base = spectral_summary(CAT.power(5))
    fib = spectral_summary(CAT)
    r = rates_from_spectra(base, fib)
    lam = cat_log_modulus()
    assert xi(r) == pytest.approx(min(-lam + 5 * lam, 5 * lam - lam))


def test_classification_two_block():
    base = spectral_summary(CAT.power(5))
    fib = spectral_summary(CAT)
    lam = cat_log_modulus()
    rep = classify_skew_product(base, fib, [(-lam, lam)])
    assert rep.in_U2 and not rep.in_U1 and rep.fiber_in_DS2
    names = [r.name for r in rep.rows]
    assert names == ["spt2_1", "spt2_2", "spt2_3", "ds2_pinching_alike"]


def test_classification_rejects_disordered_rates():
    base = spectral_summary(CAT.power(5))
    fib = spectral_summary(CAT)
    with pytest.raises(InconsistentRates):
        classify_skew_product(base, fib, [(1.0, -1.0)])


def test_inequality_rows_are_strict():
    # equality must never count as a pass
    rows, _ = example_condition_rows(CAT, CAT, 4)
    assert rows[0].margin == pytest.approx(0.0, abs=1e-12)
    assert not rows[0].holds
