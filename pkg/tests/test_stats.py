import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pressure_field.engine import Patch, Provenance, TickReport, ValidatedPatch
from pressure_field.records import TrialRecord
from pressure_field.stats import (
    analyze_transitions,
    basin_quality_holds,
    chi2_sf,
    chi_square_independence,
    cohens_h,
    convergence_check,
    fisher_exact_2x2,
    regularized_gamma_q,
    wilson_ci,
)

scipy_stats = pytest.importorskip("scipy.stats")
scipy_special = pytest.importorskip("scipy.special")


def test_wilson_reference_values():
    lo, hi = wilson_ci(131, 270)
    assert (round(lo, 4), round(hi, 4)) == (0.4262, 0.5446)
    lo, hi = wilson_ci(29, 30)
    assert (round(lo, 4), round(hi, 4)) == (0.8333, 0.9941)


def test_wilson_extremes():
    assert wilson_ci(0, 10)[0] == 0.0
    assert wilson_ci(10, 10)[1] == 1.0
    with pytest.raises(ValueError):
        wilson_ci(1, 0)
    with pytest.raises(ValueError):
        wilson_ci(5, 4)


@given(n=st.integers(1, 500), data=st.data())
def test_wilson_matches_scipy(n, data):
    k = data.draw(st.integers(0, n))
    ci = scipy_stats.binomtest(k, n).proportion_ci(method="wilson")
    lo, hi = wilson_ci(k, n)
    assert lo == pytest.approx(ci.low, abs=1e-9)
    assert hi == pytest.approx(ci.high, abs=1e-9)


def test_fisher_reference():
    assert fisher_exact_2x2(29, 1, 26, 4) == pytest.approx(0.353256, abs=1e-6)


@settings(max_examples=200)
@given(st.lists(st.integers(0, 40), min_size=4, max_size=4))
def test_fisher_matches_scipy(cells):
    a, b, c, d = cells
    if a + b == 0 or c + d == 0 or a + c == 0 or b + d == 0:
        with pytest.raises(ValueError):
            fisher_exact_2x2(a, b, c, d)
        return
    expected = scipy_stats.fisher_exact([[a, b], [c, d]], alternative="two-sided").pvalue
    assert fisher_exact_2x2(a, b, c, d) == pytest.approx(expected, rel=1e-6, abs=1e-12)


@settings(max_examples=200)
@given(a=st.floats(0.5, 60), x=st.floats(0, 400))
def test_gamma_q_matches_scipy(a, x):
    assert regularized_gamma_q(a, x) == pytest.approx(scipy_special.gammaincc(a, x), rel=1e-8, abs=1e-300)


@pytest.mark.parametrize("stat,dof", [(0.0, 1), (3.84, 1), (9.49, 4), (427.12, 4), (1000.0, 10)])
def test_chi2_sf_matches_scipy(stat, dof):
    assert chi2_sf(stat, dof) == pytest.approx(scipy_stats.chi2.sf(stat, dof), rel=1e-8)


def test_chi_square_five_strategies():
    table = [[131, 139], [30, 240], [4, 266], [1, 269], [1, 269]]
    stat, p = chi_square_independence(table)
    ref = scipy_stats.chi2_contingency(table, correction=False)
    assert stat == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-6)
    assert stat == pytest.approx(427.12, abs=0.01)


@pytest.mark.parametrize("table", [[[1, 2]], [[0, 0], [1, 1]], [[1, 0], [2, 0]], [[1, 2, 3], [1, 1, 1]]])
def test_chi_square_rejects_bad_tables(table):
    with pytest.raises(ValueError):
        chi_square_independence(table)


def test_cohens_h():
    assert cohens_h(0.867, 0.333) == pytest.approx(1.1647, abs=1e-4)
    assert cohens_h(0.5, 0.5) == 0.0
    assert cohens_h(0.2, 0.8) == pytest.approx(-cohens_h(0.8, 0.2))
    with pytest.raises(ValueError):
        cohens_h(1.2, 0.5)


def test_transitions():
    t = analyze_transitions([[5, 4, 4, 6, 2], [1, 1]])
    assert (t.improved, t.degraded, t.unchanged) == (2, 1, 2)
    assert t.mean_improvement == pytest.approx(2.5)
    assert t.total == 5


def _report(tick, before, after, deltas, pressures_before, pressures_after):
    applied = [ValidatedPatch(Patch(rid, None, Provenance("a")), d, True) for rid, d in deltas]
    return TickReport(tick, before, after, pressures_before, pressures_after, active=[0], applied=applied)


def test_convergence_check_values():
    reports = [
        _report(0, 3.0, 1.5, [(0, -1.0), (1, -0.5)], [2.0, 1.0, 0.0], [1.0, 0.5, 0.0]),
        _report(1, 1.5, 1.5, [], [1.0, 0.5, 0.0], [1.0, 0.5, 0.0]),
        _report(2, 1.5, 0.5, [(0, -1.0)], [1.0, 0.5, 0.0], [0.0, 0.5, 0.0]),
    ]
    record = TrialRecord(pressure_history=[3.0, 1.5, 1.5, 0.5])
    check = convergence_check(record, reports)
    assert (check.delta_min, check.epsilon, check.observed_active_ticks) == (0.5, 0.0, 2)
    assert check.bound == pytest.approx(6.0)
    assert check.holds and check.parallel_holds
    assert check.min_tick_drop_ratio == pytest.approx(1.5)


def test_convergence_bound_infinite_when_coupling_dominates():
    reports = [_report(0, 3.0, 2.0, [(0, -1.0)], [2.0, 1.0], [0.0, 2.0])]
    check = convergence_check(TrialRecord(pressure_history=[3.0, 2.0]), reports)
    assert check.epsilon == 1.0 and math.isinf(check.bound)


def test_convergence_none_without_patches():
    reports = [_report(0, 1.0, 1.0, [], [1.0], [1.0])]
    assert convergence_check(TrialRecord(pressure_history=[1.0, 1.0]), reports) is None


def test_basin_quality():
    assert basin_quality_holds(TrialRecord(termination="quiescent", pressure_history=[0.9]), 20, 0.05)
    assert not basin_quality_holds(TrialRecord(termination="quiescent", pressure_history=[1.0]), 20, 0.05)
    assert basin_quality_holds(TrialRecord(termination="budget", pressure_history=[9.0]), 20, 0.05)
