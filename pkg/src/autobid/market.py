"""Auction environment: requests, slots, advertisers, a GSP engine and delivery accounting.

Click-through rates are separable, ``ctr = quality[i] * position_factor[s]``, and
advertisers are billed per click in expectation, so a win in slot ``s`` costs
``price * ctr`` and yields ``ctr * cvr`` expected conversions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, MalformedRequestError

TCPA = "tcpa"
TROI = "troi"

# Relative slack applied when judging an episode constraint, absorbing float rounding only.
CONSTRAINT_RTOL = 1e-9


@dataclass(frozen=True)
class Slot:
    slot_id: int
    position_factor: float

    def __post_init__(self):
        if not 0.0 < self.position_factor <= 1.0:
            raise MalformedRequestError(
                f"position_factor must lie in (0, 1], got {self.position_factor}"
            )


@dataclass(frozen=True)
class AdvertiserProfile:
    """Private type of an auto-bidding advertiser.

    ``values`` maps a value class to the value of one conversion in that class.
    ``target`` is a tCPA (monetary) when ``constraint == "tcpa"`` and a tROI
    (dimensionless) when ``constraint == "troi"``. ``goal_flag`` is 0 for a
    revenue maximizer and 1 for a profit maximizer.
    """

    advertiser_id: str
    values: Mapping[str, float]
    constraint: str
    target: float
    goal_flag: int = 1
    auto_bidding: bool = True

    def __post_init__(self):
        if not self.values:
            raise DomainError("values map must be non-empty")
        if any(not v > 0 for v in self.values.values()):
            raise DomainError("values per conversion must be strictly positive")
        if self.goal_flag not in (0, 1):
            raise DomainError(f"goal_flag must be 0 or 1, got {self.goal_flag}")
        if self.constraint == TCPA:
            if len(self.values) != 1:
                raise DomainError("a tCPA advertiser has a single value per conversion")
            if not 0 < self.target < self.value:
                raise DomainError(f"tCPA must lie in (0, v), got {self.target}")
        elif self.constraint == TROI:
            if not self.target > 0:
                raise DomainError(f"tROI must be positive, got {self.target}")
        else:
            raise DomainError(f"unknown constraint kind {self.constraint!r}")

    @classmethod
    def tcpa(cls, advertiser_id, value, target, goal_flag=1, value_class="base"):
        return cls(advertiser_id, {value_class: value}, TCPA, target, goal_flag)

    @classmethod
    def troi(cls, advertiser_id, values, gamma, goal_flag=1):
        return cls(advertiser_id, dict(values), TROI, gamma, goal_flag)

    @property
    def value(self) -> float:
        """The single value per conversion; only defined for constant-value advertisers."""
        if len(self.values) != 1:
            raise DomainError("advertiser has several value classes")
        return next(iter(self.values.values()))

    @property
    def value_class(self) -> str:
        if len(self.values) != 1:
            raise DomainError("advertiser has several value classes")
        return next(iter(self.values))

    def with_target(self, target) -> "AdvertiserProfile":
        return AdvertiserProfile(
            self.advertiser_id, self.values, self.constraint, target,
            self.goal_flag, self.auto_bidding,
        )


@dataclass(frozen=True)
class AdRequest:
    request_id: int
    value_class: str
    slots: tuple
    matched: tuple
    quality: Mapping[str, float]
    cvr: Mapping[str, float]

    def __post_init__(self):
        if not self.slots:
            raise MalformedRequestError(f"request {self.request_id} has no slots")
        factors = [s.position_factor for s in self.slots]
        if any(b >= a for a, b in zip(factors, factors[1:])):
            raise MalformedRequestError("position factors must strictly decrease")
        for adv in self.matched:
            q, c = self.quality.get(adv), self.cvr.get(adv)
            if q is None or c is None:
                raise MalformedRequestError(f"missing quality/cvr for {adv!r}")
            if not (0 < q <= 1 and 0 < c <= 1):
                raise MalformedRequestError(f"quality and cvr of {adv!r} must lie in (0, 1]")

    def ctr(self, advertiser_id, slot_index) -> float:
        return self.quality[advertiser_id] * self.slots[slot_index].position_factor


@dataclass(frozen=True)
class AuctionOutcome:
    allocation: dict  # slot_id -> advertiser_id
    price_per_click: dict  # slot_id -> price
    rank_scores: dict  # advertiser_id -> score

    def slot_of(self, advertiser_id):
        for slot_id, adv in self.allocation.items():
            if adv == advertiser_id:
                return slot_id
        return None


@dataclass(frozen=True)
class DeliveryRecord:
    request_id: int
    conversions: float
    spend: float

    @property
    def cpa(self) -> float | None:
        """Cost per conversion, or ``None`` when nothing converted."""
        if self.conversions > 0:
            return self.spend / self.conversions
        return None


@dataclass(frozen=True)
class EpisodeSummary:
    total_conversions: float
    total_spend: float
    revenue: float
    delivered_cpa: float | None
    delivered_roi: float | None
    utility: float
    constraint_satisfied: bool
    n_requests: int = 0
    violation_count: int = 0

    def cpa_bound(self, gamma) -> float | None:
        """The CPA a tROI ``gamma`` allows given this episode's value mix."""
        if self.total_conversions <= 0:
            return None
        return self.revenue / ((1.0 + gamma) * self.total_conversions)


def roi_to_tcpa(v, gamma):
    if not v > 0 or not gamma > 0:
        raise DomainError(f"roi_to_tcpa needs v > 0 and gamma > 0, got ({v}, {gamma})")
    return v / (1 + gamma)


def constraint_met(profile: AdvertiserProfile, spend, revenue, conversions) -> bool:
    """Judge the bottom-line constraint on cumulative quantities."""
    if conversions <= 0:
        return spend <= 0
    if profile.constraint == TCPA:
        return spend <= profile.target * conversions * (1 + CONSTRAINT_RTOL)
    return spend * (1 + profile.target) <= revenue * (1 + CONSTRAINT_RTOL)


def run_gsp_auction(request: AdRequest, bids: Mapping[str, float], reserve: float = 0.0) -> AuctionOutcome:
    """Generalized second-price position auction with quality-weighted ranking.

    Bids are per click. An advertiser is eligible when it bids a positive amount
    of at least ``reserve``. Ties in score go to the smaller advertiser id. The
    rank-k winner pays ``max(next score, reserve * q_k) / q_k`` per click.
    """
    if not request.slots:
        raise MalformedRequestError(f"request {request.request_id} has no slots")
    if not bids:
        raise ValueError("at least one bid is required")
    for adv, b in bids.items():
        if adv not in request.quality:
            raise MalformedRequestError(f"{adv!r} is not matched to request {request.request_id}")
        if b < 0 or math.isnan(b):
            raise ValueError(f"bid of {adv!r} must be non-negative, got {b}")

    scores = {adv: b * request.quality[adv] for adv, b in bids.items()}
    eligible = [adv for adv, b in bids.items() if b > 0 and b >= reserve]
    ranked = sorted(eligible, key=lambda adv: (-scores[adv], adv))

    allocation, prices = {}, {}
    for k, slot in enumerate(request.slots):
        if k >= len(ranked):
            break
        winner = ranked[k]
        q = request.quality[winner]
        next_score = scores[ranked[k + 1]] if k + 1 < len(ranked) else 0.0
        allocation[slot.slot_id] = winner
        prices[slot.slot_id] = min(max(next_score, reserve * q) / q, bids[winner])
    return AuctionOutcome(allocation, prices, scores)


def compute_request_delivery(outcome: AuctionOutcome, request: AdRequest, advertiser_id) -> DeliveryRecord:
    if advertiser_id not in request.matched:
        raise MalformedRequestError(f"{advertiser_id!r} is not matched to request {request.request_id}")
    cv = spend = 0.0
    cvr = request.cvr[advertiser_id]
    for k, slot in enumerate(request.slots):
        if outcome.allocation.get(slot.slot_id) != advertiser_id:
            continue
        ctr = request.ctr(advertiser_id, k)
        cv += ctr * cvr
        spend += outcome.price_per_click[slot.slot_id] * ctr
    return DeliveryRecord(request.request_id, cv, spend)


def aggregate_episode(records: Sequence[DeliveryRecord], profile: AdvertiserProfile,
                      value_classes: Sequence[str], violation_count: int = 0) -> EpisodeSummary:
    """Sum per-request deliveries into the episode summary.

    Utility is ``sum((v_j - I * cpa_j) * cv_j)``; when the episode misses the
    advertiser's true constraint the utility is replaced by ``-total_spend``.
    """
    if len(records) != len(value_classes):
        raise ValueError("one value class per record is required")
    cv = spend = revenue = 0.0
    for rec, h in zip(records, value_classes):
        cv += rec.conversions
        spend += rec.spend
        revenue += profile.values[h] * rec.conversions
    if cv <= 0:
        utility = 0.0 if spend <= 0 else -spend
        return EpisodeSummary(0.0, spend, 0.0, None, None, utility, spend <= 0,
                              len(records), violation_count)
    cpa = spend / cv
    roi = (revenue - spend) / spend if spend > 0 else math.inf
    ok = constraint_met(profile, spend, revenue, cv)
    utility = revenue - profile.goal_flag * spend if ok else -spend
    return EpisodeSummary(cv, spend, revenue, cpa, roi, utility, ok, len(records), violation_count)


@dataclass(frozen=True)
class Scenario:
    """An auction episode: the ordered request stream and every competitor's per-click bid."""

    seed: int
    requests: tuple
    competitor_bids: Mapping[tuple, float]  # (request_id, advertiser_id) -> bid
    auto_bidder: AdvertiserProfile
    reserve: float = 0.0

    def __post_init__(self):
        for key, b in self.competitor_bids.items():
            if not b > 0:
                raise MalformedRequestError(f"competitor bid {key} must be positive, got {b}")

    def __len__(self):
        return len(self.requests)

    def competitors(self, request: AdRequest):
        aid = self.auto_bidder.advertiser_id
        return [adv for adv in request.matched if adv != aid]

    def bids_for(self, request: AdRequest) -> dict:
        return {adv: self.competitor_bids[(request.request_id, adv)] for adv in self.competitors(request)}

    def with_auto_bidder(self, profile: AdvertiserProfile) -> "Scenario":
        if profile.advertiser_id != self.auto_bidder.advertiser_id:
            raise ValueError("replacement profile must keep the advertiser id")
        return Scenario(self.seed, self.requests, self.competitor_bids, profile, self.reserve)

    @cached_property
    def packed(self) -> "PackedScenario":
        return PackedScenario.from_scenario(self)

    def to_dict(self) -> dict:
        p = self.auto_bidder
        return {
            "seed": self.seed,
            "reserve": self.reserve,
            "auto_bidder": {
                "advertiser_id": p.advertiser_id, "values": dict(p.values),
                "constraint": p.constraint, "target": p.target, "goal_flag": p.goal_flag,
            },
            "requests": [
                {
                    "request_id": r.request_id,
                    "value_class": r.value_class,
                    "position_factors": [s.position_factor for s in r.slots],
                    "matched": list(r.matched),
                    "quality": dict(r.quality),
                    "cvr": dict(r.cvr),
                    "bids": self.bids_for(r),
                }
                for r in self.requests
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        p = data["auto_bidder"]
        profile = AdvertiserProfile(p["advertiser_id"], dict(p["values"]), p["constraint"],
                                    p["target"], int(p.get("goal_flag", 1)))
        requests, bids = [], {}
        for r in data["requests"]:
            slots = tuple(Slot(k + 1, f) for k, f in enumerate(r["position_factors"]))
            req = AdRequest(int(r["request_id"]), r["value_class"], slots, tuple(r["matched"]),
                            dict(r["quality"]), dict(r["cvr"]))
            requests.append(req)
            for adv, b in r["bids"].items():
                bids[(req.request_id, adv)] = float(b)
        return cls(int(data.get("seed", 0)), tuple(requests), bids, profile,
                   float(data.get("reserve", 0.0)))


@dataclass(frozen=True)
class PackedScenario:
    """Flat array view of a scenario consumed by the episode kernels.

    Slots and competitors are stored CSR-style: request ``j`` owns
    ``theta[slot_ptr[j]:slot_ptr[j+1]]`` and the competitor entries
    ``comp_*[comp_ptr[j]:comp_ptr[j+1]]``. ``*_key`` arrays hold each
    advertiser's position in the sorted id order and break score ties.
    """

    slot_ptr: np.ndarray
    theta: np.ndarray
    comp_ptr: np.ndarray
    comp_index: np.ndarray
    comp_key: np.ndarray
    comp_quality: np.ndarray
    comp_bid: np.ndarray
    auto_quality: np.ndarray
    auto_cvr: np.ndarray
    value: np.ndarray
    value_class: tuple
    auto_key: int
    n_competitors: int
    competitor_ids: tuple
    reserve: float

    @property
    def n_requests(self):
        return len(self.auto_quality)

    @property
    def max_competitors(self):
        return int(np.max(np.diff(self.comp_ptr))) if self.n_requests else 0

    @classmethod
    def from_scenario(cls, sc: Scenario) -> "PackedScenario":
        aid = sc.auto_bidder.advertiser_id
        comp_ids = sorted({adv for r in sc.requests for adv in r.matched if adv != aid})
        comp_pos = {adv: i for i, adv in enumerate(comp_ids)}
        key = {adv: k for k, adv in enumerate(sorted(comp_ids + [aid]))}
        slot_ptr, theta = [0], []
        comp_ptr, c_idx, c_key, c_q, c_b = [0], [], [], [], []
        q_a, cvr_a, val, classes = [], [], [], []
        for r in sc.requests:
            if aid not in r.matched:
                raise MalformedRequestError(f"auto-bidder not matched to request {r.request_id}")
            theta.extend(s.position_factor for s in r.slots)
            slot_ptr.append(len(theta))
            for adv in r.matched:
                if adv == aid:
                    continue
                c_idx.append(comp_pos[adv])
                c_key.append(key[adv])
                c_q.append(r.quality[adv])
                c_b.append(sc.competitor_bids[(r.request_id, adv)])
            comp_ptr.append(len(c_idx))
            q_a.append(r.quality[aid])
            cvr_a.append(r.cvr[aid])
            val.append(sc.auto_bidder.values[r.value_class])
            classes.append(r.value_class)
        f64 = lambda xs: np.asarray(xs, dtype=np.float64)  # noqa: E731
        i64 = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
        return cls(i64(slot_ptr), f64(theta), i64(comp_ptr), i64(c_idx), i64(c_key), f64(c_q),
                   f64(c_b), f64(q_a), f64(cvr_a), f64(val), tuple(classes), key[aid],
                   len(comp_ids), tuple(comp_ids), float(sc.reserve))
