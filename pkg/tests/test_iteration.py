import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifespan_lab.iteration import (
    SlicingScheme, ThresholdWarning, build_slicing, envelope_V, kg_alpha, kg_D, kg_sequences,
    kg_thresholds, kg_upper_T, log_lower_bound_terms, massless_closed_forms, massless_sequences,
    massless_upper_T,
)
from lifespan_lab.model import SystemParams, char_roots
from lifespan_lab.oracle import HomogeneousData, integrate_blowup, reduce_homogeneous

F = Fraction
TWO, ONE = SlicingScheme.TWO_STEP, SlicingScheme.ONE_STEP
KG = SystemParams(2.0, 0.75, 2, 2, 1e-3)
ML = SystemParams(2.0, 0.0, 2, 2, 1e-3)


def kg_setup(params=KG, r=1, C_r=1.0):
    roots = char_roots(params)
    sl = build_slicing(TWO, params, roots)
    return roots, sl, kg_thresholds(params, roots, sl, C_r, r)


# --- slicing -----------------------------------------------------------------------


def test_two_step_slicing_example():
    sl = build_slicing(TWO, SystemParams(3.0, 2.0, 2, 2), K=2)  # k2 = 1
    assert sl.ell.tolist() == pytest.approx([1.0, 1.5, 1.25], abs=1e-15)
    assert sl.L[2] == pytest.approx(1.875, abs=1e-15)


def test_one_step_slicing_example():
    sl = build_slicing(ONE, SystemParams(2.0, 0.0, 2, 2), K=1)
    assert sl.ell.tolist() == [0.5, 1.25]
    assert sl.L[1] == 0.625


def test_single_factor_slicing():
    sl = build_slicing(TWO, SystemParams(5.0, 6.0, 2, 2), K=0)  # k2 = 2
    assert sl.ell.tolist() == pytest.approx([0.5])
    assert sl.L[0] == pytest.approx(0.5)


def test_two_step_rejects_massless():
    with pytest.raises(ValueError):
        build_slicing(TWO, ML)


@pytest.mark.parametrize("scheme,params", [(TWO, KG), (ONE, ML), (TWO, SystemParams(2, 0.75, 1.3, 2))])
def test_slicing_converges_and_is_stable(scheme, params):
    a = build_slicing(scheme, params, K=130)
    b = build_slicing(scheme, params, K=260)
    assert abs(a.L_limit - b.L_limit) < 1e-14 * a.L_limit
    # keep to factors whose increment is resolvable in double precision
    k = int(np.argmax(a.ell[1:] - 1 < 1e-13)) + 1
    assert np.all(a.ell[1:k] > 1)
    assert np.all(np.diff(a.L[1:k]) > 0)
    assert a.L[-1] <= a.L_limit * (1 + 1e-15)
    steps = np.diff(a.L[1:k])
    assert np.all(steps[1:] < steps[:-1])


# --- sequence identities -----------------------------------------------------------------


@pytest.mark.parametrize("j,value", [(0, 1), (1, 6), (2, 26)])
def test_kg_alpha_examples(j, value):
    a, gap = kg_alpha(j, 1, 4)
    assert a == value and gap == 0


pq_pairs = st.tuples(
    st.fractions(F(21, 20), F(4), max_denominator=20), st.fractions(F(21, 20), F(4), max_denominator=20)
)


@settings(max_examples=50, deadline=None)
@given(pq_pairs, st.sampled_from([0, 1]))
def test_recursions_match_closed_forms_exactly(pq, r):
    p, q = pq
    params = SystemParams(2.0, 0.0, p, q)
    seq = massless_sequences(params, 1.0, 1.0, r, J=12)
    for j in range(13):
        a, gap = kg_alpha(j, r, p * q)
        assert isinstance(a, Fraction) and gap == 0
        ca, cb = massless_closed_forms(j, r, p, q)
        assert seq.a[j] == ca and seq.b_seq[j] == cb


def test_massless_sequence_examples():
    seq = massless_sequences(ML, 1.0, 1.0, 1, J=2)
    assert [int(x) for x in seq.a] == [0, 5, 25]
    assert [int(x) for x in seq.b_seq] == [1, 8, 36]
    seq0 = massless_sequences(ML.with_epsilon(0.01), 0.5, 2.0, 0, J=1)
    assert seq0.a[0] == 0 and seq0.b_seq[0] == 0
    assert seq0.log_H[0] == pytest.approx(math.log(0.005))
    assert seq0.log_K[0] == pytest.approx(math.log(0.02))


def test_massless_sequences_reject_bad_constants():
    with pytest.raises(ValueError):
        massless_sequences(ML, -1.0, 1.0, 1)
    with pytest.raises(ValueError):
        massless_sequences(ML, 1.0, 0.0, 1)
    with pytest.raises(ValueError):
        massless_sequences(KG, 1.0, 1.0, 1)


def test_kg_D_first_step_matches_rational_oracle():
    _, sl, _ = kg_setup()
    seq = kg_sequences(KG, 1.0, 1, sl, J=2)
    assert kg_D(0, seq) == pytest.approx(math.log(1e-3))
    # D1 / D0^4 = 3.5^4 / (0.75^2 1.875^4 (5)(6) 4^6)
    ratio = F(7, 2) ** 4 / (F(3, 4) ** 2 * F(15, 8) ** 4 * 30 * 4**6)
    assert float(ratio) == pytest.approx(1.7565e-4, rel=1e-4)
    assert kg_D(1, seq) - 4 * kg_D(0, seq) == pytest.approx(math.log(ratio), abs=1e-12)


def test_kg_D_rejects_trivial_data():
    _, sl, _ = kg_setup()
    with pytest.raises(ValueError):
        kg_sequences(KG, 0.0, 1, sl)


def test_log_D_monotone_in_epsilon():
    _, sl, _ = kg_setup()
    prev = None
    for eps in (1e-2, 1e-3, 1e-4, 1e-5):
        logs = kg_sequences(KG.with_epsilon(eps), 1.0, 1, sl, J=10).log_D
        if prev is not None:
            assert np.all(logs < prev)
        prev = logs


# --- thresholds ---------------------------------------------------------------------------


def test_kg_threshold_values():
    _, sl, th = kg_setup()
    assert th.M0 == pytest.approx(25 / 9, rel=1e-14)
    assert th.M1_limit == pytest.approx(math.exp(5), rel=1e-14)
    assert th.M1 >= th.M1_limit
    assert th.eps0 > 0
    A = 2 / 3 + 1
    assert th.eps0 == pytest.approx((2 * sl.L_limit) ** (-A) / th.M3, rel=1e-14)
    assert th.j0 >= math.log(th.M2) / (10 * math.log(4)) - 4 / 3


@pytest.mark.parametrize("r", [0, 1])
def test_M1_dominates_scan(r):
    _, sl, th = kg_setup(r=r)
    for j in range(65):
        a, _ = kg_alpha(j + 1, r, 4)
        assert float(a) * math.log(sl.ell[2 * j + 1] * sl.ell[2 * j + 2]) <= math.log(th.M1) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 5), st.floats(0.01, 1.0), st.floats(1.05, 3), st.floats(1.05, 3), st.sampled_from([0, 1]))
def test_eps0_positive(b, frac, p, q, r):
    params = SystemParams(b, frac * b * b / 4, p, q)
    _, _, th = kg_setup(params, r)
    assert th.eps0 > 0 and th.M3 > 0


def test_kg_deadline_scaling_and_flags():
    _, sl, th = kg_setup()
    e = 1e-8  # well inside the power-law regime
    assert kg_upper_T(e / 10, th) / kg_upper_T(e, th) == pytest.approx(10**0.6, rel=1e-12)
    assert math.isfinite(kg_upper_T(th.eps0, th)) and kg_upper_T(th.eps0, th) > 0
    with pytest.warns(ThresholdWarning):
        kg_upper_T(2 * th.eps0, th)
    _, _, th0 = kg_setup(r=0)
    assert th0.deadline_exponent == pytest.approx(1.5)


def test_massless_deadline_exponents_and_monotone():
    s1 = massless_sequences(ML, 1.0, 1.0, 1)
    s0 = massless_sequences(ML, 1.0, 1.0, 0)
    assert s1.v_exponent == pytest.approx(3 / 7) and s0.v_exponent == pytest.approx(0.75)
    # u route governs r = 0: (pq - 1)/(2p + 1) = 3/5
    assert s0.u_exponent == pytest.approx(0.6)
    e = 1e-12
    for s, expo in ((s1, 3 / 7), (s0, 3 / 5)):
        assert massless_upper_T(e / 10, s) / massless_upper_T(e, s) == pytest.approx(10**expo, rel=1e-12)
    grid = np.logspace(-12, -3, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdWarning)
        T = [massless_upper_T(x, s1) for x in grid]
    assert all(a >= b for a, b in zip(T, T[1:]))


def test_massless_trivial_u_disables_u_route():
    s = massless_sequences(ML, 0.0, 1.0, 0)
    assert s.M5 == 0 and s.j1 is None
    assert massless_upper_T(1e-12, s) == pytest.approx((s.M6 * 1e-12) ** (-0.75), rel=1e-12)


def test_M4_bounds_weights_from_below():
    s = massless_sequences(ML, 1.0, 1.0, 1)
    sl = build_slicing(ONE, ML)
    for j in range(1, 40):
        assert s.M4 <= sl.ell[j] ** (-float(s.a[j])) * (1 + 1e-12)
        assert s.M4 <= sl.ell[j] ** (-float(s.b_seq[j])) * (1 + 1e-12)


# --- envelopes ------------------------------------------------------------------------------


def test_envelope_zero_epsilon():
    _, sl, _ = kg_setup()
    seq = kg_sequences(KG.with_epsilon(0.0), 1.0, 1, sl)
    assert all(envelope_V(t, seq, sl) == 0 for t in (0.0, 1.0, 10.0, 100.0))


def test_envelope_at_slicing_point():
    _, sl, _ = kg_setup()
    seq = kg_sequences(KG, 1.0, 1, sl)
    t = float(sl.L[2])
    assert envelope_V(t, seq, sl) >= 1e-3 * t
    assert all(j != 1 or lv == -math.inf for j, lv in log_lower_bound_terms(t, seq, sl))


def test_envelope_below_oracle_at_t10():
    traj, _ = integrate_blowup(KG, reduce_homogeneous(KG, HomogeneousData(0, 0, 0, 1)), 1e4)
    _, sl, _ = kg_setup()
    seq = kg_sequences(KG, 1.0, 1, sl)
    V10 = float(traj(np.array([10.0]))[2][0])
    env = envelope_V(10.0, seq, sl)
    assert 0 < env <= V10 * (1 + 1e-9)


def test_divergence_trigger_past_deadline():
    _, sl, th = kg_setup()
    eps = 1e-3
    assert eps <= th.eps0
    seq = kg_sequences(KG.with_epsilon(eps), 1.0, 1, sl)
    t = 1.01 * kg_upper_T(eps, th)
    terms = dict(log_lower_bound_terms(t, seq, sl))
    js = sorted(j for j in terms if j >= th.j0)
    vals = [terms[j] for j in js]
    assert len(vals) > 5 and all(b > a for a, b in zip(vals, vals[1:]))
