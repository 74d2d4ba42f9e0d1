"""Proxy-advertiser bid formulas and competitor-bid estimation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

from .errors import DomainError
from .market import TCPA, TROI, AdRequest


@dataclass(frozen=True)
class StrategyParams:
    """Dual parameters of the optimal bid family: ``m`` for tCPA, ``n`` for tROI."""

    m: float = 1.0
    n: float = 1.0

    def __post_init__(self):
        if not (self.m > 0 and self.n > 0):
            raise DomainError(f"strategy parameters must be positive, got m={self.m}, n={self.n}")


def optimal_bid(goal_flag, constraint, target, value, cvr, params: StrategyParams = StrategyParams()):
    """Per-click bid of the optimal constrained strategy.

    ``constraint`` is ``"tcpa"`` (``target`` = t) or ``"troi"`` (``target`` = gamma).
    Revenue maximizers (``goal_flag=0``) divide by m or n, profit maximizers by m+1 or n+1.
    """
    if not value > 0:
        raise DomainError(f"value must be positive, got {value}")
    if not 0 < cvr <= 1:
        raise DomainError(f"cvr must lie in (0, 1], got {cvr}")
    if goal_flag not in (0, 1):
        raise DomainError(f"goal_flag must be 0 or 1, got {goal_flag}")
    if constraint == TCPA:
        if not target > 0:
            raise DomainError("tCPA must be positive")
        m = params.m
        return (m * target + value) * cvr / (m + goal_flag)
    if constraint == TROI:
        if not target > 0:
            raise DomainError("tROI must be positive")
        n, g = params.n, target
        return (n + g + 1) * value * cvr / ((n + goal_flag) * (g + 1))
    raise DomainError(f"unknown constraint kind {constraint!r}")


def bid_per_conversion(goal_flag, constraint, target, value, params: StrategyParams = StrategyParams()):
    """The cvr-free factor of :func:`optimal_bid`; the per-click bid is this times cvr."""
    return optimal_bid(goal_flag, constraint, target, value, 1.0, params)


@dataclass
class BidHistory:
    """Competitor bids observed so far in an episode."""

    last: Dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    count: int = 0

    def observe(self, bids):
        for adv, b in bids.items():
            self.last[adv] = b
            self.total += b
            self.count += 1

    @property
    def mean(self):
        return self.total / self.count if self.count else None


Estimator = Callable[[BidHistory, AdRequest, list, float], Dict[str, float]]
ESTIMATORS: Dict[str, Estimator] = {}


def register_estimator(name):
    def deco(fn):
        ESTIMATORS[name] = fn
        return fn
    return deco


@register_estimator("last_observed")
def last_observed(history: BidHistory, request, competitors, reserve=0.0):
    mean = history.mean
    fallback = mean if mean is not None else reserve
    return {adv: history.last.get(adv, fallback) for adv in competitors}


def estimate_competitor_bids(history: BidHistory, request: AdRequest, competitors, reserve=0.0,
                             estimator="last_observed"):
    """Estimated per-click bid of every competitor matched to ``request``.

    The default uses each competitor's latest observed bid, then the mean of all
    observed bids, then ``reserve``.
    """
    return ESTIMATORS[estimator](history, request, list(competitors), reserve)
