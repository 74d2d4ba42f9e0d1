"""Misreport sweeps and the reproducible counterexamples.

A sweep evaluates the advertiser's utility at every report on a grid, either
from a mechanism's curves or by driving episodes, and checks that reporting the
truth is (near) optimal and leaves non-negative utility.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _core
from .bidding import StrategyParams, bid_per_conversion
from .control import ControlConfig, run_episode, run_spa_episode
from .errors import DomainError
from .market import TCPA, TROI, AdvertiserProfile, Scenario, constraint_met, roi_to_tcpa
from .mechanism import AggregatedMechanism, CompositeMechanism, PerRequestSpaMechanism
from .scenario import example1_scenario

CLOSED_FORM = "closed_form"
SIMULATED = "simulated"
CLOSED_FORM_TOL = 1e-9
SIMULATED_RTOL = 0.03
MIN_GRID_POINTS = 20
TOP_K = 3


@dataclass(frozen=True)
class SweepRow:
    report: float
    seed: int | None
    utility: float
    delivered: float | None  # CPA for tCPA advertisers, ROI for tROI advertisers
    constraint_satisfied: bool
    violations: int


@dataclass(frozen=True)
class DrawAudit:
    """Sweep result against one competitor draw (or the closed form when ``seed`` is None)."""

    seed: int | None
    utilities: tuple
    truth_utility: float
    argmax: float
    gap: float
    truth_rank: int  # 1 + number of reports strictly better than the truth
    tolerance: float
    ic: bool
    ir: bool


@dataclass
class AuditReport:
    truth: float
    grid: tuple
    mode: str
    draws: list
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def worst(self) -> DrawAudit:
        """The draw with the largest gap relative to its tolerance."""
        return max(self.draws, key=lambda d: (d.gap - d.tolerance, d.gap))

    @property
    def ic(self):
        return all(d.ic for d in self.draws)

    @property
    def ir(self):
        return all(d.ir for d in self.draws)

    @property
    def argmax(self):
        return self.worst.argmax

    @property
    def gap(self):
        return self.worst.gap

    @property
    def utilities(self):
        return self.worst.utilities

    def truth_in_top(self, k=TOP_K):
        return all(d.truth_rank <= k for d in self.draws)


def _evaluate_closed_form(mechanism: AggregatedMechanism, profile: AdvertiserProfile, report):
    cv, spend, revenue = mechanism.totals(report, values=profile.values)
    ok = constraint_met(profile, spend, revenue, cv)
    utility = revenue - profile.goal_flag * spend if ok else -spend
    if profile.constraint == TCPA:
        delivered = spend / cv if cv > 0 else None
    else:
        delivered = (revenue - spend) / spend if spend > 0 else None
    return SweepRow(float(report), None, utility, delivered, ok, 0)


def _evaluate_simulated(mechanism, profile, report, scenario: Scenario, config: ControlConfig):
    if isinstance(mechanism, PerRequestSpaMechanism):
        result = run_spa_episode(scenario, profile, report)
    else:
        result = run_episode(scenario, profile, mechanism, report, config)
    s = result.summary
    delivered = s.delivered_cpa if profile.constraint == TCPA else s.delivered_roi
    return SweepRow(float(report), scenario.seed, s.utility, delivered, s.constraint_satisfied,
                    s.violation_count)


def utility_of_report(mechanism, profile: AdvertiserProfile, report, mode=CLOSED_FORM,
                      scenario: Scenario | None = None,
                      config: ControlConfig = ControlConfig()) -> float:
    """Advertiser utility of reporting ``report`` when the truth is ``profile``.

    A delivery that breaks the true constraint is worth ``-spend``.
    """
    if mode == CLOSED_FORM:
        if isinstance(mechanism, PerRequestSpaMechanism):
            raise DomainError("a per-request auction has no closed form; audit it by simulation")
        return _evaluate_closed_form(mechanism, profile, report).utility
    if mode == SIMULATED:
        if scenario is None:
            raise DomainError("simulated utility needs a scenario")
        return _evaluate_simulated(mechanism, profile, report, scenario, config).utility
    raise DomainError(f"unknown audit mode {mode!r}")


def _with_truth(grid, truth):
    pts = sorted({float(r) for r in grid} | {float(truth)})
    return tuple(pts)


def _judge(seed, grid, truth, utilities, tolerance_rule):
    u = np.asarray(utilities, dtype=float)
    k_truth = grid.index(truth)
    u_truth = float(u[k_truth])
    k_best = int(np.argmax(u))
    gap = max(float(u[k_best]) - u_truth, 0.0)
    tol = tolerance_rule(u_truth)
    rank = 1 + int(np.count_nonzero(u > u_truth))
    return DrawAudit(seed, tuple(float(x) for x in u), u_truth, grid[k_best], gap, rank, tol,
                     gap <= tol, u_truth >= 0.0)


def ic_audit(mechanism, profile: AdvertiserProfile, grid, mode=CLOSED_FORM, tolerance=None,
             scenarios: Sequence[Scenario] = (), config: ControlConfig = ControlConfig(),
             min_points=MIN_GRID_POINTS) -> AuditReport:
    """Sweep reports on ``grid`` (the truth is always added) and judge IC and IR.

    In closed form the truth must be within ``tolerance`` (default 1e-9) of the best
    report. In simulated mode every scenario is one competitor draw; the truth must
    be within ``tolerance * |U(truth)|`` (default 3%) of the best report on each.
    ``mechanism`` may be a callable taking a scenario and returning the mechanism
    to use on it, for mechanisms calibrated per draw.
    """
    truth = float(profile.target)
    pts = _with_truth(grid, truth)
    if len(pts) < min_points:
        raise DomainError(f"audit grid needs at least {min_points} points, got {len(pts)}")
    report = AuditReport(truth, pts, mode, [])
    if mode == CLOSED_FORM:
        tol = CLOSED_FORM_TOL if tolerance is None else tolerance
        if not isinstance(mechanism, AggregatedMechanism):
            raise DomainError("a closed-form audit needs a mechanism with delivery curves")
        rows = [_evaluate_closed_form(mechanism, profile, r) for r in pts]
        report.rows.extend(rows)
        report.draws.append(_judge(None, pts, truth, [r.utility for r in rows], lambda u: tol))
        return report
    if mode != SIMULATED:
        raise DomainError(f"unknown audit mode {mode!r}")
    if not scenarios:
        raise DomainError("a simulated audit needs at least one scenario")
    rtol = SIMULATED_RTOL if tolerance is None else tolerance
    per_seed = []
    for sc in scenarios:
        if isinstance(mechanism, (AggregatedMechanism, PerRequestSpaMechanism)):
            mech = mechanism
        else:
            mech = mechanism(sc)
        rows = [_evaluate_simulated(mech, profile, r, sc, config) for r in pts]
        per_seed.append(rows)
        report.draws.append(_judge(sc.seed, pts, truth, [r.utility for r in rows],
                                   lambda u: rtol * abs(u)))
    # rows sorted by report, then seed
    for k in range(len(pts)):
        for rows in sorted(per_seed, key=lambda rs: rs[0].seed):
            report.rows.append(rows[k])
    return report


# --- the per-request second-price counterexample ---------------------------

@dataclass(frozen=True)
class SpaOutcome:
    report: float
    won_requests: tuple
    profit: float
    delivered_cpa: float | None
    constraint_satisfied: bool


@dataclass(frozen=True)
class SpaComparison:
    value: float
    truth: float
    truthful: SpaOutcome
    overbid: SpaOutcome

    @property
    def gain(self):
        return self.overbid.profit - self.truthful.profit


def _spa_outcome(scenario, profile, report):
    result = run_spa_episode(scenario, profile, report)
    won = tuple(int(r) for r, s in zip(result.log.request_id, result.log.slot) if s > 0)
    s = result.summary
    return SpaOutcome(report, won, s.utility, s.delivered_cpa, s.constraint_satisfied)


def spa_counterexample(value=10.0, truth=4.0, overbid=None) -> SpaComparison:
    """Truthful versus overbidding tCPA in the two-request per-request auction market.

    The strongest rival in request 1 bids 5; overbidding just past it wins both
    requests while the blended CPA stays below the truth.
    """
    scenario = example1_scenario(value, truth)
    profile = scenario.auto_bidder
    over = 5.0 * (1 + 1e-9) if overbid is None else float(overbid)
    return SpaComparison(float(value), float(truth), _spa_outcome(scenario, profile, truth),
                         _spa_outcome(scenario, profile, over))


def spa_audit(value=10.0, truth=4.0, grid=None) -> AuditReport:
    """Simulated sweep of the per-request auction on the two-request market."""
    scenario = example1_scenario(value, truth)
    if grid is None:
        grid = np.linspace(0.25, value - 0.25, 2 * MIN_GRID_POINTS).tolist()
    return ic_audit(PerRequestSpaMechanism(), scenario.auto_bidder, grid, SIMULATED,
                    scenarios=[scenario])


# --- value-independent bounded conversions ---------------------------------

@dataclass(frozen=True)
class Counterexample:
    value: float
    truth: float
    truthful_utility: float
    best_report: float
    best_utility: float

    @property
    def gap(self):
        return self.best_utility - self.truthful_utility


def unknown_value_demo(bounded_cv: Callable[[float], float], pairs, report_grid=None,
                       atol=1e-12) -> list:
    """Profitable misreports when conversions ignore the value and CPA equals the report.

    For each ``(v, t)`` the best feasible report ``t' <= t`` (so the delivered CPA
    stays within the truth) is compared against the truth under profit
    maximization. ``report_grid`` defaults to every truth appearing in ``pairs``.
    """
    pairs = [(float(v), float(t)) for v, t in pairs]
    grid = sorted({t for _, t in pairs} if report_grid is None else {float(r) for r in report_grid})
    found = []
    for v, t in pairs:
        if not 0 < t < v:
            raise DomainError(f"need 0 < t < v, got v={v}, t={t}")
        truthful = (v - t) * bounded_cv(t)
        best_r, best_u = t, truthful
        for r in grid:
            if r > t or r <= 0:
                continue
            u = (v - r) * bounded_cv(r)
            if u > best_u:
                best_r, best_u = r, u
        if best_u > truthful + atol:
            found.append(Counterexample(v, t, truthful, best_r, best_u))
    return found


# --- tROI / tCPA equivalence ------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    gamma: float
    tcpa: float
    paced: bool
    roi_satisfied: bool
    cpa_satisfied: bool
    roi_delivered: float | None
    cpa_delivered: float | None
    boundary_gap: float  # relative gap between delivered CPA and the CPA implied by delivered ROI
    rtol: float

    @property
    def agree(self):
        return self.roi_satisfied == self.cpa_satisfied and self.boundary_gap <= self.rtol


def _episode_totals(packed, per_conversion, k):
    coef = np.ascontiguousarray(per_conversion * packed.auto_cvr)
    return _core.oracle_totals(packed, coef, k)


def _paced_multiplier(packed, per_conversion, feasible, iterations=60):
    hi = 1.0
    while feasible(*_episode_totals(packed, per_conversion, hi)) and hi < 1e6:
        hi *= 2.0
    lo = 0.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if feasible(*_episode_totals(packed, per_conversion, mid)):
            lo = mid
        else:
            hi = mid
    return lo


def cpa_roi_equivalence_check(scenario: Scenario, gamma, goal_flag=1, tcpa=None, paced=False,
                              params: StrategyParams = StrategyParams(), rtol=0.01) -> EquivalenceReport:
    """Run the optimal bid family once under tROI ``gamma`` and once under tCPA ``v/(1+gamma)``.

    With ``paced`` both runs first bisect a global bid multiplier to the largest one
    meeting their own constraint. ``tcpa`` overrides the matched target (a negative
    control). The value must be constant across the scenario's requests.
    """
    packed = scenario.packed
    values = np.unique(packed.value)
    if values.size > 1:
        raise DomainError("equivalence needs a constant value per conversion")
    v = float(values[0]) if values.size else float(next(iter(scenario.auto_bidder.values.values())))
    t = roi_to_tcpa(v, gamma) if tcpa is None else float(tcpa)
    h = next(iter(scenario.auto_bidder.values))
    roi_profile = AdvertiserProfile.troi("a", {h: v}, gamma, goal_flag)
    cpa_profile = AdvertiserProfile.tcpa("a", v, t, goal_flag, h)
    roi_bid = bid_per_conversion(goal_flag, TROI, gamma, v, params)
    cpa_bid = bid_per_conversion(goal_flag, TCPA, t, v, params)

    def run(profile, per_conversion):
        def feasible(cv, spend):
            return constraint_met(profile, spend, v * cv, cv)
        k = _paced_multiplier(packed, per_conversion, feasible) if paced else 1.0
        cv, spend = _episode_totals(packed, per_conversion, k)
        return cv, spend, feasible(cv, spend)

    cv_r, sp_r, ok_r = run(roi_profile, roi_bid)
    cv_c, sp_c, ok_c = run(cpa_profile, cpa_bid)
    roi = (v * cv_r - sp_r) / sp_r if sp_r > 0 else None
    cpa = sp_c / cv_c if cv_c > 0 else None
    if roi is None or cpa is None:
        gap = 0.0 if roi is None and cpa is None else math.inf
    else:
        implied = v / (1 + roi)
        gap = abs(cpa - implied) / implied
    return EquivalenceReport(float(gamma), t, paced, ok_r, ok_c, roi, cpa, gap, rtol)


# --- composition across sub-markets ----------------------------------------

def composition_audit(parts, gamma, grid, goal_flag=None) -> AuditReport:
    """Closed-form sweep of the combined sub-market mechanisms for a tROI advertiser."""
    composite = CompositeMechanism(parts)
    goal = composite.goal_flag if goal_flag is None else goal_flag
    profile = AdvertiserProfile.troi("a", composite.values, gamma, goal)
    return ic_audit(composite, profile, grid, CLOSED_FORM)
