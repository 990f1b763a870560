import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifespan_lab.model import CaseTag, MassCase
from lifespan_lab.sweep import (
    ConfigError, FitResult, RowResult, SweepConfig, SweepResult, compare_to_theory, deadline, emit,
    fit_exponent, horizon_for, load_result, log_grid, parse_grid, plot_data, render_svg, rows_csv,
    run_sweep, summarize,
)

KG1, KG0 = CaseTag(MassCase.DAMPED_KLEIN_GORDON, 1), CaseTag(MassCase.DAMPED_KLEIN_GORDON, 0)
ML1, ML0 = CaseTag(MassCase.MASSLESS, 1), CaseTag(MassCase.MASSLESS, 0)
SMALL = log_grid(1e-3, 1e-2, 4)


def fit_of(slope):
    return FitResult(slope, 0.0, 0.0, 1.0, 8)


# --- configuration -----------------------------------------------------------------------------


def test_default_grid():
    g = SweepConfig().epsilon_grid
    assert len(g) == 8 and g[0] == pytest.approx(1e-2) and g[-1] == pytest.approx(1e-5)


@pytest.mark.parametrize("kw", [
    dict(epsilon_grid=(1e-2, 1e-3, 1e-4)),
    dict(epsilon_grid=(1e-4, 1e-3, 1e-2, 1e-1)),
    dict(epsilon_grid=(1e-2, 1e-2, 1e-3, 1e-4)),
    dict(engine="fem"),
    dict(data="perturbed"),
    dict(b=1.0, m2=1.0),
    dict(constants=(0, 0, 1)),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SweepConfig(**kw)


def test_parse_grid():
    assert parse_grid("1e-5:1e-2:8") == SweepConfig().epsilon_grid
    with pytest.raises(ConfigError):
        parse_grid("1e-2:1e-5:8")
    with pytest.raises(ConfigError):
        parse_grid("oops")


def test_config_dict_round_trip():
    c = SweepConfig(m2=0.0, constants=(1, 0, 1, 0), epsilon_grid=SMALL)
    assert SweepConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"bogus": 1})


def test_horizon_rule():
    c = SweepConfig()
    e = 1e-3
    assert horizon_for(c, e) == pytest.approx(10 * deadline(c.params, c.homogeneous, e))
    capped = SweepConfig(horizon_cap=50.0)
    assert horizon_for(capped, 1e-5) == 50.0
    assert horizon_for(SweepConfig(constants=(0, 0, 0, 0)), e) == c.horizon_cap


# --- fitting ---------------------------------------------------------------------------------------


def test_fit_exact_power_law():
    eps = np.logspace(-2, -5, 8)
    f = fit_exponent([(e, e**-0.6) for e in eps])
    assert f.slope == pytest.approx(0.6, abs=1e-12)
    assert f.stderr == pytest.approx(0, abs=1e-12) and f.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_absorbs_prefactor():
    eps = np.logspace(-2, -5, 8)
    f = fit_exponent([(e, 7 * e**-1.5) for e in eps])
    assert f.slope == pytest.approx(1.5, abs=1e-12)
    assert f.intercept == pytest.approx(math.log(7), abs=1e-12)


def test_fit_with_noise():
    rng = np.random.default_rng(0)
    eps = np.logspace(-2, -5, 8)
    f = fit_exponent([(e, e**-0.6 * (1 + 0.01 * rng.standard_normal())) for e in eps])
    assert abs(f.slope - 0.6) <= 0.02


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(-5, 5))
def test_fit_recovers_any_power_law(slope, log_c):
    eps = np.logspace(-1, -6, 6)
    f = fit_exponent([(e, math.exp(log_c) * e**-slope) for e in eps])
    assert f.slope == pytest.approx(slope, abs=1e-9)
    assert f.r2 == pytest.approx(1.0, abs=1e-9)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_exponent([(1e-2, 10), (1e-3, 20), (1e-4, 30)])
    with pytest.raises(ValueError):
        fit_exponent([(1e-2, 10.0)] * 5)


def test_fit_uses_only_blowup_rows():
    rows = [RowResult(e, e**-0.5, 0, 0, "blew_up", 1, ()) for e in np.logspace(-2, -4, 5)]
    rows.append(RowResult(1e-5, None, 10.0, 10.0, "censored", 1, ()))
    assert fit_exponent(rows).n == 5


# --- verdicts ------------------------------------------------------------------------------------


@pytest.mark.parametrize("case,p,q,slope,status", [
    (KG1, 2, 2, 0.58, "pass"), (KG1, 2, 2, 0.65, "pass"), (KG1, 2, 2, 0.67, "fail"),
    (KG1, 2, 2, 0.53, "fail"), (KG0, 1.3, 2, 0.77, "pass"), (KG0, 1.3, 2, 0.95, "fail"),
    (ML1, 2, 2, 0.40, "pass"), (ML1, 2, 2, 0.31, "pass"), (ML1, 2, 2, 0.47, "fail"),
    (ML0, 2, 2, 0.61, "pass"), (ML0, 2, 2, 0.75, "fail"), (ML0, 2, 2, 0.46, "fail"),
])
def test_verdict_table(case, p, q, slope, status):
    assert compare_to_theory(fit_of(slope), case, p, q).status == status


def test_verdict_caveat_when_lower_bound_inapplicable():
    v = compare_to_theory(fit_of(1.2), KG0, 1.8, 2)
    assert v.status == "pass" and v.lower is None
    assert any("p < 2 - 1/q" in c for c in v.caveats)
    assert compare_to_theory(fit_of(1.5), KG0, 1.8, 2).status == "fail"


def test_verdict_without_fit():
    v = compare_to_theory(None, KG1, 2, 2)
    assert v.status == "inconclusive" and not v.passed


# --- orchestration and emission ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_result():
    return run_sweep(SweepConfig(epsilon_grid=SMALL))


def test_all_zero_data_inconclusive():
    res = run_sweep(SweepConfig(constants=(0, 0, 0, 0), epsilon_grid=SMALL, horizon_cap=100.0))
    assert all(r.status == "censored" for r in res.rows)
    assert res.fit is None and res.verdict.status == "inconclusive"
    assert any("25%" in f for f in res.flags)


def test_censoring_flag():
    res = run_sweep(SweepConfig(epsilon_grid=SMALL, horizon_cap=60.0))
    statuses = [r.status for r in res.rows]
    assert statuses[0] == "blew_up" and statuses[-1] == "censored"
    assert any("censored" in f for f in res.flags)


def test_strict_threshold():
    with pytest.raises(ConfigError):
        run_sweep(SweepConfig(epsilon_grid=log_grid(1e-1, 1e2, 4), strict_threshold=True))


def test_aggregation_order_independent(small_result):
    rows = list(small_result.rows)
    random.Random(0).shuffle(rows)
    rows.sort(key=lambda r: -r.epsilon)
    again = summarize(small_result.config, rows, small_result.audit)
    assert again.to_json() == small_result.to_json()


def test_parallel_matches_serial(small_result):
    par = run_sweep(small_result.config, jobs=3)
    assert par.to_json() == small_result.to_json()
    assert rows_csv(par.rows) == rows_csv(small_result.rows)


def test_emit_files(tmp_path, small_result):
    written = emit(small_result, tmp_path, ["csv", "json", "svg"])
    assert {p.split("/")[-1] for p in written} == {"sweep.csv", "plot_data.csv", "sweep.json", "sweep.svg"}
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "epsilon,T_est,T_low,T_high,status,steps,refinements"
    assert len(lines) - 1 == len(small_result.config.epsilon_grid)
    assert load_result(tmp_path / "sweep.json") == small_result
    assert "eps0" in json.loads((tmp_path / "sweep.json").read_text())["audit"]
    assert render_svg(small_result) == (tmp_path / "sweep.svg").read_text()


def test_emit_empty_result(tmp_path):
    res = summarize(SweepConfig(epsilon_grid=SMALL), [])
    emit(res, tmp_path, ["csv", "json"])
    assert (tmp_path / "sweep.csv").read_text().splitlines() == [
        "epsilon,T_est,T_low,T_high,status,steps,refinements"]
    assert json.loads((tmp_path / "sweep.json").read_text())["verdict"]["status"] == "inconclusive"
    assert plot_data(res).splitlines() == ["kind,ln_inv_eps,ln_T"]


def test_emit_rejects_unknown_format(tmp_path, small_result):
    with pytest.raises(ConfigError):
        emit(small_result, tmp_path, ["xlsx"])


def test_json_round_trip_field_for_field(small_result):
    back = SweepResult.from_dict(json.loads(small_result.to_json()))
    assert back == small_result
    assert back.rows[0].refinements == small_result.rows[0].refinements
