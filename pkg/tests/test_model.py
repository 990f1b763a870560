import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifespan_lab.model import (
    BoundKind, CaseTag, MassCase, SystemParams, as_exact, char_roots, data_weight,
    decay_factor, gn_admissible, gn_theta, is_double_root, loss_parameter,
    lower_lifespan_exponent, massless_decay_rate, nakao_rn_blowup, upper_lifespan_exponent,
)

KG, ML = MassCase.DAMPED_KLEIN_GORDON, MassCase.MASSLESS
F = Fraction

rationals = st.fractions(min_value=F(51, 50), max_value=F(5), max_denominator=50)


@st.composite
def valid_bm2(draw):
    b = draw(st.floats(0.01, 100.0))
    m2 = draw(st.floats(0.0, 1.0)) * b * b / 4
    return b, m2


# --- parameters ----------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(b=0.0, m2=0.0, p=2, q=2), dict(b=-1.0, m2=0.0, p=2, q=2), dict(b=1.0, m2=-0.1, p=2, q=2),
    dict(b=1.0, m2=0.3, p=2, q=2), dict(b=2.0, m2=0.0, p=1, q=2), dict(b=2.0, m2=0.0, p=2, q=0.5),
    dict(b=2.0, m2=0.0, p=2, q=2, epsilon=-1e-3),
])
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        SystemParams(**kw)


def test_mass_case_and_exact_pq():
    assert SystemParams(2, 0.75, 2, 2).mass_case is KG
    assert SystemParams(2, 0, 2, 2).mass_case is ML
    assert SystemParams(2, 0, 1.3, 2).pq == F(13, 5)
    assert SystemParams(2, 0, 2, 2).with_epsilon(0.1).epsilon == 0.1


def test_as_exact_falls_back_to_float():
    assert as_exact(0.5) == F(1, 2)
    assert isinstance(as_exact(math.pi), float)


def test_case_tag_rejects_bad_r():
    with pytest.raises(ValueError):
        CaseTag(KG, 2)


# --- characteristic roots ----------------------------------------------------------


@pytest.mark.parametrize("b,m2,k1,k2,double", [(2, 1, 1, 1, True), (3, 2, 2, 1, False), (1, 0, 1, 0, False)])
def test_char_roots_examples(b, m2, k1, k2, double):
    r = char_roots(SystemParams(b, m2, 2, 2))
    assert r.k1 == pytest.approx(k1, abs=1e-12)
    assert r.k2 == pytest.approx(k2, abs=1e-12)
    assert r.double_root is double
    assert abs(r.k1**2 - b * r.k1 + m2) < 1e-12


@settings(max_examples=1000, deadline=None)
@given(valid_bm2())
def test_char_roots_vieta(bm2):
    b, m2 = bm2
    r = char_roots(SystemParams(b, m2, 2, 2))
    assert abs(r.k1 + r.k2 - b) <= 1e-12 * b
    assert abs(r.k1 * r.k2 - m2) <= 1e-12 * max(m2, 1e-300) or m2 == 0
    assert r.k1 >= r.k2 >= 0
    assert (r.k2 > 0) == (m2 > 0)
    assert r.double_root == is_double_root(b, m2)


def test_small_root_is_not_cancelled():
    # naive (b - sqrt(b^2 - 4 m2)) / 2 loses every digit here
    r = char_roots(SystemParams(1e4, 1e-8, 2, 2))
    assert r.k2 == pytest.approx(1e-12, rel=1e-12)


# --- exponents --------------------------------------------------------------------------


@pytest.mark.parametrize("case,r,p,q,value", [
    (KG, 1, 2, 2, F(3, 5)), (KG, 0, 2, 2, F(3, 2)), (ML, 1, 2, 2, F(3, 7)), (ML, 0, 2, 2, F(3, 5)),
])
def test_upper_exponent_values(case, r, p, q, value):
    e = upper_lifespan_exponent(CaseTag(case, r), p, q)
    assert e.value == value and e.bound_kind is BoundKind.UPPER


@pytest.mark.parametrize("case,r,p,q,value", [
    (KG, 1, 2, 2, F(3, 5)), (KG, 0, 1.3, 2, F(4, 5)), (ML, 1, 2, 2, F(1, 3)), (ML, 0, 2, 2, F(1, 2)),
])
def test_lower_exponent_values(case, r, p, q, value):
    e = lower_lifespan_exponent(CaseTag(case, r), p, q)
    assert e.value == value and e.bound_kind is BoundKind.LOWER


def test_lower_exponent_applicability_flag():
    ok = lower_lifespan_exponent(CaseTag(KG, 0), 1.3, 2)
    assert "satisfied" in ok.applicability
    bad = lower_lifespan_exponent(CaseTag(KG, 0), 1.8, 2)
    assert bad.value is None and not bad.applicable and "violated" in bad.applicability
    with pytest.raises(ValueError):
        float(bad)


@given(rationals, rationals)
def test_kg_sharpness_exact(p, q):
    case = CaseTag(KG, 1)
    assert upper_lifespan_exponent(case, p, q).value == lower_lifespan_exponent(case, p, q).value


@given(rationals, rationals, st.sampled_from([0, 1]))
def test_massless_lower_below_upper(p, q, r):
    case = CaseTag(ML, r)
    lo = lower_lifespan_exponent(case, p, q).value
    up = upper_lifespan_exponent(case, p, q).value
    assert 0 < lo <= up


@given(rationals, rationals, st.sampled_from([0, 1]), st.sampled_from([KG, ML]))
def test_upper_exponent_positive(p, q, r, case):
    assert upper_lifespan_exponent(CaseTag(case, r), p, q).value > 0


# --- loss parameter ---------------------------------------------------------------------


@pytest.mark.parametrize("p,q,r,value", [(2, 2, 1, F(-1, 3)), (2, 2, 0, F(2, 3)), (1.5, 2, 1, F(-1, 2))])
def test_loss_parameter_values(p, q, r, value):
    lp = loss_parameter(p, q, r)
    assert lp.value == value
    assert lp.contraction_margin == 1 - value * as_exact(q)


@given(rationals, rationals)
def test_loss_margin_formula_r1(p, q):
    # 1 - lambda q = (pq + 1)(q - 1)/(pq - 1) when r = 1, hence positive
    lp = loss_parameter(p, q, 1)
    assert lp.contraction_margin == (p * q + 1) * (q - 1) / (p * q - 1)
    assert lp.closes


# --- decay rates ------------------------------------------------------------------------


def test_decay_factor_examples():
    assert decay_factor(2, 1, 0.0) == 1.0
    assert decay_factor(3, 2, 1.0) == pytest.approx(math.exp(-1), rel=1e-14)
    assert decay_factor(2, 1, 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-14)


def test_decay_factor_errors():
    with pytest.raises(ValueError):
        decay_factor(2, 1, -1.0)
    with pytest.raises(ValueError):
        decay_factor(2, 0, 1.0)


@settings(deadline=None)
@given(valid_bm2().filter(lambda x: x[1] > 1e-6))
def test_decay_factor_monotone(bm2):
    b, m2 = bm2
    assert decay_factor(b, m2, 0.0) == 1.0
    start = 2 / b if is_double_root(b, m2) else 0.0
    t = np.linspace(start, start + 20, 200)
    d = decay_factor(b, m2, t)
    assert np.all(np.diff(d) <= 1e-15)


def test_massless_rate_and_index_set():
    assert massless_decay_rate(3.0, 0, 0) == 1.0
    assert massless_decay_rate(3.0, 1, 0) == pytest.approx(0.25)
    assert massless_decay_rate(3.0, 0, 1) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        massless_decay_rate(1.0, 1, 1)


@pytest.mark.parametrize("t,r,w", [(0, 1, 1), (3, 1, 4), (3, 0, 1)])
def test_data_weight(t, r, w):
    assert data_weight(t, r) == w


# --- interpolation and the Euclidean range ---------------------------------------------------


@pytest.mark.parametrize("gamma,theta", [(2, 0.0), (4, 0.75), (6, 1.0)])
def test_gn_theta_values(gamma, theta):
    assert gn_theta(3, gamma) == pytest.approx(theta)


@pytest.mark.parametrize("n,gamma", [(3, 1.5), (3, 7), (2, 4)])
def test_gn_theta_rejects(n, gamma):
    assert not gn_admissible(n, gamma)
    with pytest.raises(ValueError):
        gn_theta(n, gamma)


@given(st.integers(3, 10), st.floats(0, 1))
def test_gn_theta_range(n, s):
    gamma = 2 + s * (2 * n / (n - 2) - 2)
    assert -1e-12 <= gn_theta(n, gamma) <= 1 + 1e-12


@pytest.mark.parametrize("n,expected", [(1, True), (3, False), (0, True)])
def test_nakao_examples(n, expected):
    assert nakao_rn_blowup(n, 2, 2) is expected


@given(rationals, rationals)
def test_nakao_zero_dimension_always(p, q):
    assert nakao_rn_blowup(0, p, q)
