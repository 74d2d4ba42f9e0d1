"""Episode delivery control: plan per-request targets, pick bids, pace with a PID loop.

``run_episode`` drives a mechanism's promise for one report through the request
stream. Each request gets an equal share of the remaining conversions and spend
as its target, the bidder picks the best bid within tolerance bands of that
target against estimated competitor bids, and a PID controller on the blended
CPA/pacing error scales bids and throttles participation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _core, _ops
from .bidding import BidHistory, estimate_competitor_bids
from .errors import DomainError
from .market import (AdRequest, AdvertiserProfile, DeliveryRecord, EpisodeSummary, Scenario,
                     aggregate_episode)


@dataclass(frozen=True)
class ControlConfig:
    kp: float = 0.2
    ki: float = 0.01
    kd: float = 0.0
    alpha_ratio: float = 0.25
    beta_ratio: float = 0.5
    beta_floor: float = 1e-6
    mult_min: float = 0.2
    mult_max: float = 5.0
    participation_min: float = 0.05
    w_c: float = 1.0
    w_v: float = 1.0
    integral_limit: float = 10.0
    # the controller aims this fraction below the promised CPA so rounding at the
    # end of an episode does not push delivery over the advertiser's bound
    cpa_margin: float = 0.005

    def __post_init__(self):
        if not 0 < self.mult_min <= 1 <= self.mult_max:
            raise DomainError("multiplier bounds must bracket 1")
        if not 0 < self.participation_min <= 1:
            raise DomainError("participation floor must lie in (0, 1]")
        if self.alpha_ratio < 0 or self.beta_ratio < 0 or self.beta_floor <= 0:
            raise DomainError("tolerance ratios must be non-negative and beta_floor positive")
        if not 0 <= self.cpa_margin < 1:
            raise DomainError("cpa_margin must lie in [0, 1)")

    def kernel_params(self):
        return (self.kp, self.ki, self.kd, self.alpha_ratio, self.beta_ratio, self.beta_floor,
                self.mult_min, self.mult_max, self.participation_min, self.w_c, self.w_v,
                self.integral_limit)


@dataclass(frozen=True)
class DeliveryPlan:
    remaining_requests: int
    tcpa: float
    tcv: float
    alpha: float
    beta: float


@dataclass(frozen=True)
class ControllerState:
    conversions: float = 0.0
    spend: float = 0.0
    integral: float = 0.0
    prev_error: float = 0.0
    multiplier: float = 1.0
    participation: float = 1.0

    @property
    def cpa(self):
        """Running CPA; 0 before the first conversion."""
        return self.spend / self.conversions if self.conversions > 0 else 0.0


@dataclass(frozen=True)
class BidDecision:
    bid: float
    slot_index: int  # -1 when the bid is predicted to lose
    predicted_cpa: float
    predicted_cv: float
    feasible: bool
    cpa_slack: float
    cv_slack: float


def ics_next_target(state: ControllerState, cpa_target, cv_target, remaining,
                    config: ControlConfig = ControlConfig()) -> DeliveryPlan:
    tcpa, tcv, alpha, beta = _ops.ics_target(
        state.conversions, state.spend, cpa_target, cv_target, remaining,
        config.alpha_ratio, config.beta_ratio, config.beta_floor)
    return DeliveryPlan(remaining, tcpa, tcv, alpha, beta)


def _tie_keys(request: AdRequest):
    return {adv: k for k, adv in enumerate(sorted(request.matched))}


def constrained_bid(request: AdRequest, estimates, plan: DeliveryPlan, value, goal_flag,
                    multiplier=1.0, advertiser_id="a", reserve=0.0,
                    config: ControlConfig = ControlConfig()) -> BidDecision:
    """Best per-click bid for one request given estimated competitor bids and a target band."""
    missing = [adv for adv in request.matched if adv != advertiser_id and adv not in estimates]
    if missing:
        raise DomainError(f"no estimate for competitors {missing}")
    keys = _tie_keys(request)
    comps = [adv for adv in request.matched if adv != advertiser_id]
    bids = [float(estimates[adv]) for adv in comps]
    scores = [b * request.quality[adv] for b, adv in zip(bids, comps)]
    thetas = [s.position_factor for s in request.slots]
    bid, slot, cpa, cv, feasible, cs, vs = _ops.choose_bid(
        request.quality[advertiser_id], keys[advertiser_id], scores, [keys[c] for c in comps],
        bids, thetas, request.cvr[advertiser_id], reserve, value, goal_flag,
        plan.tcpa, plan.tcv, plan.alpha, plan.beta, config.beta_floor, multiplier,
        config.w_c, config.w_v)
    return BidDecision(bid, slot, cpa, cv, feasible, cs, vs)


def ecs_adjust(state: ControllerState, cpa_target, cv_target, progress,
               config: ControlConfig = ControlConfig()) -> ControllerState:
    integral, err, mult, part = _ops.ecs_update(
        state.conversions, state.spend, cpa_target, cv_target, progress, state.integral,
        state.prev_error, state.multiplier, state.participation, config.kp, config.ki,
        config.kd, config.mult_min, config.mult_max, config.participation_min,
        config.integral_limit)
    return replace(state, integral=integral, prev_error=err, multiplier=mult, participation=part)


@dataclass
class EpisodeLog:
    """Per-request trace of an episode, in stream order."""

    request_id: np.ndarray
    value_class: tuple
    slot: np.ndarray  # 1-based slot id, 0 when nothing was won
    bid: np.ndarray
    price: np.ndarray
    conversions: np.ndarray
    spend: np.ndarray
    feasible: np.ndarray
    cpa_slack: np.ndarray
    cv_slack: np.ndarray
    multiplier: np.ndarray
    participated: np.ndarray

    def __len__(self):
        return len(self.request_id)

    def cumulative_cpa(self):
        cv = np.cumsum(self.conversions)
        sp = np.cumsum(self.spend)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(cv > 0, sp / np.where(cv > 0, cv, 1.0), np.nan)

    def records(self):
        return [DeliveryRecord(int(r), float(c), float(s))
                for r, c, s in zip(self.request_id, self.conversions, self.spend)]

    def violations(self):
        """``(request_id, cpa_slack, cv_slack)`` for every request decided outside its bands."""
        bad = np.flatnonzero(self.feasible == 0)
        return [(int(self.request_id[i]), float(self.cpa_slack[i]), float(self.cv_slack[i]))
                for i in bad]


@dataclass
class EpisodeResult:
    summary: EpisodeSummary
    log: EpisodeLog
    targets: dict = field(default_factory=dict)  # value class -> (cpa, cv)


def _empty_log():
    z = np.zeros(0)
    zi = np.zeros(0, dtype=np.int64)
    return EpisodeLog(zi, (), zi, z, z, z, z, zi.astype(np.int8), z, z, z, zi.astype(np.int8))


def run_episode(scenario: Scenario, profile: AdvertiserProfile, mechanism, report,
                config: ControlConfig = ControlConfig()) -> EpisodeResult:
    """Deliver ``mechanism``'s promise for ``report`` over the scenario's request stream.

    Requests are partitioned by value class; each class is driven toward its own
    ``(cpa_h, cv_h)`` promise independently, and the logs are merged back into
    stream order. The summary is judged against ``profile``'s true constraint.
    """
    if len(scenario) == 0:
        return EpisodeResult(aggregate_episode([], profile, []), _empty_log(), {})
    targets = mechanism.deliveries(report)
    packed = scenario.packed
    classes = np.asarray(packed.value_class)
    n = packed.n_requests
    slot = np.full(n, -1, dtype=np.int64)
    fields = {k: np.zeros(n) for k in ("bid", "price", "cv", "spend", "cpa_slack", "cv_slack",
                                       "multiplier")}
    feasible = np.ones(n, dtype=np.int8)
    participated = np.zeros(n, dtype=np.int8)
    for h in sorted(set(packed.value_class)):
        indices = np.flatnonzero(classes == h).astype(np.int64)
        if h not in targets:
            continue
        cpa_h, cv_h = targets[h]
        aim = cpa_h * (1.0 - config.cpa_margin)
        out = _core.run_controlled(packed, indices, float(profile.values[h]), profile.goal_flag,
                                   float(aim), float(cv_h), config.kernel_params())
        slot[indices] = out["slot"]
        for k in fields:
            fields[k][indices] = out[k]
        feasible[indices] = out["feasible"]
        participated[indices] = out["participated"]
    log = EpisodeLog(
        np.array([r.request_id for r in scenario.requests], dtype=np.int64),
        packed.value_class, np.where(slot >= 0, slot + 1, 0), fields["bid"], fields["price"],
        fields["cv"], fields["spend"], feasible, fields["cpa_slack"], fields["cv_slack"],
        fields["multiplier"], participated)
    n_viol = int(np.count_nonzero(log.feasible == 0))
    summary = aggregate_episode(log.records(), profile, packed.value_class, n_viol)
    return EpisodeResult(summary, log, dict(targets))


def run_spa_episode(scenario: Scenario, profile: AdvertiserProfile, report) -> EpisodeResult:
    """Per-request second-price auction on the reported tCPA: bid ``report * cvr`` per click."""
    if len(scenario) == 0:
        return EpisodeResult(aggregate_episode([], profile, []), _empty_log(), {})
    packed = scenario.packed
    coef = np.asarray(packed.auto_cvr, dtype=np.float64)
    n = packed.n_requests
    slot = np.full(n, -1, dtype=np.int64)
    price = np.zeros(n)
    cv = np.zeros(n)
    spend = np.zeros(n)
    for j in range(n):
        a, b = packed.comp_ptr[j], packed.comp_ptr[j + 1]
        s0, s1 = packed.slot_ptr[j], packed.slot_ptr[j + 1]
        bids = packed.comp_bid[a:b].tolist()
        scores = (packed.comp_bid[a:b] * packed.comp_quality[a:b]).tolist()
        q_a = float(packed.auto_quality[j])
        s, p = _ops.predict_outcome(report * coef[j], q_a, packed.auto_key, scores,
                                    packed.comp_key[a:b].tolist(), bids,
                                    packed.theta[s0:s1].tolist(), packed.reserve)
        if s >= 0:
            ctr = q_a * float(packed.theta[s0 + s])
            slot[j], price[j] = s, p
            cv[j] = ctr * float(packed.auto_cvr[j])
            spend[j] = p * ctr
    ones = np.ones(n, dtype=np.int8)
    log = EpisodeLog(np.array([r.request_id for r in scenario.requests], dtype=np.int64),
                     packed.value_class, np.where(slot >= 0, slot + 1, 0), report * coef, price,
                     cv, spend, ones, np.zeros(n), np.zeros(n), np.ones(n), ones)
    summary = aggregate_episode(log.records(), profile, packed.value_class)
    return EpisodeResult(summary, log, {})


def running_cpa_error(log: EpisodeLog, target, burn_in=0.2):
    """Largest relative gap between the running CPA and ``target`` after the burn-in fraction."""
    cum = log.cumulative_cpa()
    start = int(math.floor(burn_in * len(cum)))
    tail = cum[start:]
    tail = tail[~np.isnan(tail)]
    if tail.size == 0:
        return math.inf
    return float(np.max(np.abs(tail - target)) / target)
