import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from autobid.audit import (CLOSED_FORM, SIMULATED, composition_audit, cpa_roi_equivalence_check,
                           ic_audit, spa_audit, spa_counterexample, unknown_value_demo,
                           utility_of_report)
from autobid.errors import DomainError
from autobid.market import AdvertiserProfile, constraint_met
from autobid.mechanism import (PROPORTIONAL, UNIFORM, Curve, CurveMechanism, DecomposedMechanism,
                               GFunction, LinearDecomposition, make_g_function,
                               make_submarket_curve, submarket_mechanism, tcpa_mechanism)
from autobid.reference import REFERENCE_SCENARIO
from autobid.scenario import ScenarioConfig, generate_scenario


def identity_mech(goal=1, v=10.0):
    xs = np.linspace(0.1, 9.9, 99)
    return tcpa_mechanism(v, goal, GFunction.from_arrays(xs, xs))


def test_utility_below_truth_is_g():
    p = AdvertiserProfile.tcpa("a", 10.0, 4.0)
    assert utility_of_report(identity_mech(), p, 3.0) == pytest.approx(3.0)


def test_overreport_breaks_the_true_bound():
    p = AdvertiserProfile.tcpa("a", 10.0, 4.0)
    # cv(5) = 5 / (10 - 5) = 1, spend 5 > 4 per conversion
    assert utility_of_report(identity_mech(), p, 5.0) == pytest.approx(-5.0)


@pytest.mark.parametrize("report", [0.5, 1.0, 2.5, 4.0])
def test_revenue_maximizer_utility(report):
    p = AdvertiserProfile.tcpa("a", 10.0, 4.0, goal_flag=0)
    assert utility_of_report(identity_mech(0), p, report) == pytest.approx(report)


def test_closed_form_audit_of_constructed_mechanism():
    p = AdvertiserProfile.tcpa("a", 10.0, 4.0)
    rep = ic_audit(identity_mech(), p, np.linspace(0.5, 9.5, 50))
    assert rep.ic and rep.ir and rep.argmax == 4.0 and rep.gap == 0.0
    assert 4.0 in rep.grid and len(rep.rows) == len(rep.grid)
    assert [r.report for r in rep.rows] == sorted(r.report for r in rep.rows)


def test_audit_grid_too_small():
    p = AdvertiserProfile.tcpa("a", 10.0, 4.0)
    with pytest.raises(DomainError):
        ic_audit(identity_mech(), p, np.linspace(1, 9, 10))


def test_constant_conversions_favour_the_smallest_report():
    m = CurveMechanism(10.0, 1, lambda t: t, lambda t: 1.0, (0.5, 9.5))
    p = AdvertiserProfile.tcpa("a", 10.0, 4.0)
    rep = ic_audit(m, p, np.linspace(0.5, 9.5, 40))
    assert not rep.ic and rep.argmax == 0.5 and rep.gap == pytest.approx(3.5)


def test_underpriced_mechanism_is_not_ic():
    # charges 90% of the report: over-reporting stays within the true bound
    m = CurveMechanism(10.0, 1, lambda t: 0.9 * t, lambda t: t, (0.5, 9.5))
    rep = ic_audit(m, AdvertiserProfile.tcpa("a", 10.0, 4.0), np.linspace(0.5, 9.5, 40))
    assert not rep.ic and rep.argmax > 4.0 and rep.gap > 0


@pytest.mark.parametrize("v", [6.0, 10.0, 20.0])
def test_per_request_auction_rewards_overbidding(v):
    rep = spa_audit(v, 4.0)
    assert not rep.ic and rep.ir
    assert rep.argmax > 5.0
    assert rep.gap == pytest.approx(v - 5.0)


def test_per_request_auction_has_no_closed_form():
    from autobid.mechanism import PerRequestSpaMechanism
    with pytest.raises(DomainError):
        utility_of_report(PerRequestSpaMechanism(), AdvertiserProfile.tcpa("a", 10, 4), 4.0)


@pytest.mark.parametrize("v,truthful,overbid", [(6.0, 5.0, 6.0), (10.0, 9.0, 14.0)])
def test_example1_arithmetic(v, truthful, overbid):
    cmp = spa_counterexample(v)
    assert cmp.truthful.won_requests == (2,) and cmp.overbid.won_requests == (1, 2)
    assert cmp.truthful.profit == truthful and cmp.overbid.profit == overbid
    assert cmp.truthful.delivered_cpa == 1.0 and cmp.overbid.delivered_cpa == 3.0
    assert cmp.overbid.constraint_satisfied


def test_example1_boundary():
    assert spa_counterexample(5.0).gain == 0.0


@given(st.floats(5.0, 100.0))
def test_example1_gain_is_value_minus_five(v):
    assert spa_counterexample(v).gain == pytest.approx(v - 5.0, rel=1e-12, abs=1e-12)


# --- value-independent conversions ------------------------------------------

GRID = np.linspace(0.5, 9.5, 19)


def test_linear_conversions_beaten_at_high_truth():
    found = unknown_value_demo(lambda t: t, [(10.0, 8.0)], GRID)
    assert len(found) == 1
    c = found[0]
    assert (c.truthful_utility, c.best_report, c.best_utility) == (16.0, 5.0, 25.0)


def test_linear_conversions_truthful_at_midpoint():
    assert unknown_value_demo(lambda t: t, [(10.0, 5.0)], GRID) == []


def test_constant_conversions_beaten_everywhere_above_minimum():
    pairs = [(10.0, t) for t in GRID]
    found = unknown_value_demo(lambda t: 2.0, pairs, GRID)
    assert [c.truth for c in found] == list(GRID[1:])
    assert all(c.best_report == GRID[0] for c in found)


@given(st.floats(0.1, 10.0), st.floats(0.5, 5.0))
def test_any_bounded_curve_has_a_counterexample(cap, shape):
    v = 10.0
    def cv(t):
        return min(cap, 0.1 + shape * t)
    ts = np.linspace(0.05, 9.99, 400)
    assert unknown_value_demo(cv, [(v, t) for t in ts], ts)


# --- tROI / tCPA equivalence -----------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_matched_targets_agree(seed):
    p = AdvertiserProfile.tcpa("a", 10.0, 5.0)
    sc = generate_scenario(REFERENCE_SCENARIO, seed, p)
    rep = cpa_roi_equivalence_check(sc, 1.0)
    assert rep.tcpa == 5.0 and rep.agree and rep.boundary_gap <= 1e-9


def test_mismatched_targets_can_disagree():
    p = AdvertiserProfile.tcpa("a", 10.0, 5.0)
    reports = [cpa_roi_equivalence_check(generate_scenario(REFERENCE_SCENARIO, s, p), 1.0,
                                         tcpa=4.0) for s in range(5)]
    assert any(r.roi_satisfied != r.cpa_satisfied for r in reports)


def test_near_zero_roi_is_break_even():
    gamma = 1e-12
    roi = AdvertiserProfile.troi("a", {"base": 10.0}, gamma)
    cpa = AdvertiserProfile.tcpa("a", 10.0, 10.0 / (1 + gamma))
    rng = np.random.default_rng(0)
    for cv, spend in rng.uniform(0.1, 10.0, size=(200, 2)) * [1.0, 15.0]:
        rev = 10.0 * cv
        if abs(spend - rev) > 1e-6:
            assert constraint_met(roi, spend, rev, cv) == constraint_met(cpa, spend, rev, cv) \
                == (spend <= rev)


def test_equivalence_needs_constant_value():
    p = AdvertiserProfile.troi("a", {"hi": 12.0, "lo": 6.0}, 1.0)
    sc = generate_scenario(ScenarioConfig(requests=50), 0, p)
    with pytest.raises(DomainError):
        cpa_roi_equivalence_check(sc, 1.0)


# --- closed-form IC across the families --------------------------------------

@given(st.floats(2.0, 50.0), st.sampled_from([0, 1]),
       st.lists(st.floats(0.0, 10.0), min_size=4, max_size=30), st.floats(0.05, 0.95))
def test_known_value_family_is_ic(v, goal, cv, truth_frac):
    xs = np.linspace(0.02 * v, 0.98 * v, len(cv))
    m = tcpa_mechanism(v, goal, make_g_function(Curve.from_arrays(xs, cv), v, goal, 0.9))
    truth = float(xs[0] + truth_frac * (xs[-1] - xs[0]))
    rep = ic_audit(m, AdvertiserProfile.tcpa("a", v, truth, goal), np.linspace(xs[0], xs[-1], 50))
    assert rep.ic and rep.ir and rep.gap <= 1e-9


def _roi_curve(seed, goal, lo=0.2, hi=4.0, n=30):
    rng = np.random.default_rng(seed)
    xs = np.linspace(lo, hi, n)
    return make_submarket_curve(Curve.from_arrays(xs, rng.uniform(0.0, 5.0, n)), goal, 0.9)


@given(st.integers(0, 10_000), st.sampled_from([0, 1]), st.floats(0.25, 3.9),
       st.floats(1.0, 30.0))
def test_submarket_family_is_ic(seed, goal, truth, v):
    m = submarket_mechanism(v, goal, _roi_curve(seed, goal))
    p = AdvertiserProfile.troi("a", {"base": v}, truth, goal)
    rep = ic_audit(m, p, np.linspace(0.2, 4.0, 50))
    assert rep.ic and rep.gap <= 1e-9


@given(st.integers(0, 10_000), st.sampled_from([0, 1]), st.floats(0.25, 3.9),
       st.sampled_from([UNIFORM, PROPORTIONAL]), st.floats(0.05, 0.95))
def test_decomposed_family_is_ic(seed, goal, truth, pricing, k):
    values = {"hi": 15.0, "lo": 5.0}
    m = DecomposedMechanism(values, LinearDecomposition({"hi": k, "lo": 1 - k}),
                            _roi_curve(seed, goal), goal, pricing)
    p = AdvertiserProfile.troi("a", values, truth, goal)
    rep = ic_audit(m, p, np.linspace(0.2, 4.0, 50))
    assert rep.ic and rep.gap <= 1e-9


@given(st.integers(0, 10_000), st.sampled_from([0, 1]), st.floats(0.25, 3.9))
def test_composition_is_ic(seed, goal, gamma):
    parts = [submarket_mechanism(15.0, goal, _roi_curve(seed, goal), "hi"),
             submarket_mechanism(5.0, goal, _roi_curve(seed + 1, goal), "lo")]
    rep = composition_audit(parts, gamma, np.linspace(0.2, 4.0, 50))
    assert rep.ic and rep.ir and rep.gap <= 1e-9


def test_simulated_audit_requires_scenarios():
    p = AdvertiserProfile.tcpa("a", 10.0, 4.0)
    with pytest.raises(DomainError):
        ic_audit(identity_mech(), p, np.linspace(0.5, 9.5, 30), SIMULATED)
    with pytest.raises(DomainError):
        ic_audit(identity_mech(), p, np.linspace(0.5, 9.5, 30), "exhaustive")
