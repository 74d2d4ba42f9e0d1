"""Aggregated delivery mechanisms and their construction from market data.

A mechanism maps an advertiser's report (a tCPA ``t`` or a tROI ``gamma``) to the
episode-level promise: per value class, the CPA charged and the conversions
delivered. Curves are piecewise-linear on a grid of knots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _core
from .bidding import StrategyParams, bid_per_conversion
from .errors import DomainError, EmptyFrontierError, InvalidMechanismError
from .market import TCPA, TROI, AdvertiserProfile, Scenario

G_FLOOR = 1e-6
MONOTONE_ATOL = 1e-9
IDENTITY_RTOL = 1e-9
DEFAULT_MARGIN = 0.9
UNIFORM = "uniform"
PROPORTIONAL = "proportional"


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear function on sorted knots; undefined outside ``[xs[0], xs[-1]]``."""

    xs: tuple
    ys: tuple

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or not self.xs:
            raise DomainError("a curve needs matching, non-empty knot lists")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise DomainError("curve knots must be strictly increasing")

    @property
    def domain(self):
        return self.xs[0], self.xs[-1]

    def __call__(self, x):
        lo, hi = self.domain
        span = max(abs(lo), abs(hi), 1.0)
        if not lo - 1e-12 * span <= x <= hi + 1e-12 * span:
            raise DomainError(f"{x} lies outside the curve domain [{lo}, {hi}]")
        return float(np.interp(float(x), self.xs, self.ys))

    @classmethod
    def from_arrays(cls, xs, ys):
        return cls(tuple(float(x) for x in xs), tuple(float(y) for y in ys))


class GFunction(Curve):
    """Utility curve of a tCPA mechanism: positive and non-decreasing across knots."""

    def __post_init__(self):
        super().__post_init__()
        if any(not y > 0 for y in self.ys):
            raise DomainError("g must be strictly positive")
        if any(b < a for a, b in zip(self.ys, self.ys[1:])):
            raise DomainError("g must be non-decreasing across knots")


def monotone_envelope(values, increasing=True):
    """Smallest monotone majorant of ``values`` on its own index order.

    Increasing envelopes take the running maximum from the left; decreasing ones
    take it from the right.
    """
    arr = np.asarray(values, dtype=float)
    if increasing:
        return np.maximum.accumulate(arr)
    return np.maximum.accumulate(arr[::-1])[::-1]


@dataclass(frozen=True)
class Frontier:
    """Largest conversions deliverable at each report and the per-conversion bid achieving it."""

    reports: tuple
    conversions: tuple
    per_conversion_bids: tuple

    @property
    def is_empty(self):
        return not any(c > 0 for c in self.conversions)

    def as_curve(self):
        return Curve.from_arrays(self.reports, self.conversions)


def _kmax(packed, coef):
    """A multiplier large enough to take the top slot of every contested request."""
    counts = np.diff(packed.comp_ptr)
    if not counts.any():
        return 1.0
    scores = packed.comp_bid * packed.comp_quality
    starts = packed.comp_ptr[:-1][counts > 0]
    top = np.maximum.reduceat(scores, starts)
    need = top / (packed.auto_quality[counts > 0] * coef[counts > 0])
    return float(np.max(need)) * 1.01 + 1e-9


def calibrate_feasible_cv(scenario: Scenario, profile: AdvertiserProfile, report_grid,
                          params: StrategyParams = StrategyParams(), iterations=60) -> Frontier:
    """Conversion ceiling for each tCPA report on ``scenario``.

    For each report ``t`` an oracle that sees the actual competitor bids bids the
    optimal-strategy bid times a global multiplier, bisected to the largest
    multiplier whose episode CPA stays within ``t``. A multiplier feasible for
    ``t`` is feasible for every larger report, so the result is made monotone by a
    running maximum.
    """
    grid = [float(t) for t in report_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("report grid must be sorted ascending")
    v = profile.value
    if grid and not (grid[0] > 0 and grid[-1] < v):
        raise DomainError("calibration reports must lie in (0, v)")
    packed = scenario.packed
    n = packed.n_requests
    if n == 0:
        zeros = tuple(0.0 for _ in grid)
        return Frontier(tuple(grid), zeros, zeros)

    cv_best, bid_best = [], []
    best_cv, best_bid = 0.0, 0.0
    for t in grid:
        scale = bid_per_conversion(profile.goal_flag, TCPA, t, v, params)
        coef = scale * packed.auto_cvr
        lo, hi = 0.0, _kmax(packed, coef)
        cv_hi, spend_hi = _core.oracle_totals(packed, coef, hi)
        if spend_hi <= t * cv_hi:
            lo = hi
        else:
            for _ in range(iterations):
                mid = 0.5 * (lo + hi)
                cv, spend = _core.oracle_totals(packed, coef, mid)
                if spend <= t * cv:
                    lo = mid
                else:
                    hi = mid
        cv_lo, _ = _core.oracle_totals(packed, coef, lo)
        if cv_lo > best_cv:
            best_cv, best_bid = cv_lo, lo * scale
        cv_best.append(best_cv)
        bid_best.append(best_bid)
    return Frontier(tuple(grid), tuple(cv_best), tuple(bid_best))


def make_g_function(frontier, v, goal_flag, margin=DEFAULT_MARGIN, floor=G_FLOOR) -> GFunction:
    """Utility curve ``g`` for a known-value tCPA mechanism built from a frontier.

    ``g`` is the running maximum of ``(v - I*t) * margin * frontier(t)``, floored at
    ``floor`` so it stays positive.
    """
    if not 0 < margin <= 1:
        raise DomainError(f"margin must lie in (0, 1], got {margin}")
    if isinstance(frontier, Frontier):
        if frontier.is_empty:
            raise EmptyFrontierError("frontier has no positive conversions")
        xs, cv = np.asarray(frontier.reports), np.asarray(frontier.conversions)
    else:
        xs, cv = np.asarray(frontier.xs), np.asarray(frontier.ys)
    head = v - goal_flag * xs
    if not np.any(head > 0):
        raise DomainError("v - I*t is non-positive on the whole grid")
    u = np.where(head > 0, head, 0.0) * margin * cv
    g = np.maximum(monotone_envelope(u, increasing=True), floor)
    return GFunction.from_arrays(xs, g)


def calibrate_submarkets(scenario: Scenario, profile: AdvertiserProfile, gamma_grid,
                         params: StrategyParams = StrategyParams(), iterations=60) -> dict:
    """Per value class, the conversion ceiling over tROI reports.

    A tROI report ``gamma`` on class ``h`` charges CPA ``v_h / (1 + gamma)``, so
    each class is calibrated as a constant-value tCPA problem on its own requests
    and the result is re-indexed by ``gamma``. The tCPA bid with ``m = n`` at that
    CPA equals the tROI bid, so ``params.n`` drives both. Returns ``{h: Frontier}`` whose
    reports are the ``gamma`` grid.
    """
    gammas = [float(g) for g in gamma_grid]
    if not gammas or gammas[0] <= 0 or any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise DomainError("tROI grid must be positive and sorted ascending")
    same = StrategyParams(params.n, params.n)
    out = {}
    for h, v in sorted(profile.values.items()):
        sub = AdvertiserProfile.tcpa(profile.advertiser_id, v, submarket_cpa(v, gammas[0]),
                                     profile.goal_flag, h)
        requests = tuple(r for r in scenario.requests if r.value_class == h)
        ids = {r.request_id for r in requests}
        bids = {k: b for k, b in scenario.competitor_bids.items() if k[0] in ids}
        part = Scenario(scenario.seed, requests, bids, sub, scenario.reserve)
        tcpa_grid = [submarket_cpa(v, g) for g in reversed(gammas)]
        frontier = calibrate_feasible_cv(part, sub, tcpa_grid, same, iterations)
        out[h] = Frontier(tuple(gammas), frontier.conversions[::-1],
                          frontier.per_conversion_bids[::-1])
    return out


class AggregatedMechanism:
    """Common surface of the mechanism families.

    Subclasses implement :meth:`deliveries`, returning ``{value_class: (cpa, cv)}``.
    """

    kind = "abstract"
    constraint = TCPA

    def __init__(self, values: Mapping[str, float], goal_flag: int, domain):
        self.values = dict(values)
        self.goal_flag = int(goal_flag)
        self.domain = (float(domain[0]), float(domain[1]))

    def deliveries(self, report) -> dict:
        raise NotImplementedError

    def _check_domain(self, report):
        lo, hi = self.domain
        span = max(abs(lo), abs(hi), 1.0)
        if not lo - 1e-12 * span <= report <= hi + 1e-12 * span:
            raise DomainError(f"report {report} outside mechanism domain [{lo}, {hi}]")

    def totals(self, report, values=None):
        """``(conversions, spend, revenue)`` promised for ``report``, valued at ``values``."""
        values = self.values if values is None else values
        cv = spend = revenue = 0.0
        for h, (cpa, c) in self.deliveries(report).items():
            cv += c
            spend += cpa * c
            revenue += values[h] * c
        return cv, spend, revenue

    def cv_of_report(self, report):
        return self.totals(report)[0]

    def cpa_of_report(self, report):
        cv, spend, _ = self.totals(report)
        if cv <= 0:
            raise DomainError("no conversions promised at this report")
        return spend / cv

    def roi_of_report(self, report):
        _, spend, revenue = self.totals(report)
        return (revenue - spend) / spend

    def utility_of(self, report):
        """Induced utility ``sum((v_h - I*cpa_h) * cv_h)`` ignoring any constraint."""
        _, spend, revenue = self.totals(report)
        return revenue - self.goal_flag * spend

    def to_dict(self) -> dict:
        raise InvalidMechanismError(f"mechanism kind {self.kind!r} cannot be exported")


class TcpaMechanism(AggregatedMechanism):
    """Known-value tCPA mechanism: charge exactly the report, deliver ``g(t) / (v - I*t)``."""

    kind = "tcpa"
    constraint = TCPA

    def __init__(self, value, goal_flag, g: GFunction, value_class="base"):
        if not isinstance(g, GFunction):
            g = GFunction(tuple(g.xs), tuple(g.ys))
        lo, hi = g.domain
        if goal_flag == 1 and not (lo > 0 and hi < value):
            raise DomainError("a profit-maximizer's report domain must lie in (0, v)")
        super().__init__({value_class: value}, goal_flag, g.domain)
        self.value = float(value)
        self.value_class = value_class
        self.g = g

    def deliveries(self, report):
        self._check_domain(report)
        cv = self.g(report) / (self.value - self.goal_flag * report)
        return {self.value_class: (report, cv)}

    def platform_revenue(self, report):
        return report * self.deliveries(report)[self.value_class][1]

    def to_dict(self):
        return {"kind": self.kind, "goal_flag": self.goal_flag, "values": self.values,
                "knots": {"x": list(self.g.xs), "y": list(self.g.ys)}}


def tcpa_mechanism(v, goal_flag, g, value_class="base") -> TcpaMechanism:
    return TcpaMechanism(v, goal_flag, g, value_class)


def _antitone_violation(xs, ys):
    for k in range(len(xs) - 1):
        if ys[k + 1] > ys[k] + MONOTONE_ATOL:
            return (xs[k], xs[k + 1])
    return None


def _roi_factor(gamma, goal_flag):
    return (1 + gamma - goal_flag) / (1 + gamma)


def submarket_cpa(value, gamma):
    return value / (1 + gamma)


def _roi_utility_curve(cv_curve: Curve, goal_flag) -> Curve:
    """Knots of ``(1+gamma-I)/(1+gamma) * cv``, checked to be non-increasing.

    Conversions between knots are read off this curve (then divided by the
    factor) so the induced utility is piecewise linear and stays monotone off
    the knots too.
    """
    xs = cv_curve.xs
    if xs[0] <= 0:
        raise DomainError("tROI reports must be positive")
    factored = [_roi_factor(g, goal_flag) * c for g, c in zip(xs, cv_curve.ys)]
    bad = _antitone_violation(xs, factored)
    if bad:
        raise InvalidMechanismError(
            f"(1+gamma-I)/(1+gamma)*cv increases between gamma={bad[0]} and gamma={bad[1]}")
    return Curve(xs, tuple(factored))


def _cv_from_utility(u_curve: Curve, cv_curve: Curve, report, goal_flag):
    k = int(np.searchsorted(cv_curve.xs, report))
    if k < len(cv_curve.xs) and cv_curve.xs[k] == report:
        return cv_curve.ys[k]
    return u_curve(report) / _roi_factor(report, goal_flag)


class SubmarketMechanism(AggregatedMechanism):
    """tROI mechanism on one value class: CPA ``v_h / (1 + gamma)``, conversions from a curve."""

    kind = "submarket"
    constraint = TROI

    def __init__(self, value, goal_flag, cv_curve: Curve, value_class="base"):
        self._u = _roi_utility_curve(cv_curve, goal_flag)
        super().__init__({value_class: value}, goal_flag, cv_curve.domain)
        self.value = value
        self.value_class = value_class
        self.cv_curve = cv_curve

    def deliveries(self, report):
        self._check_domain(report)
        cv = _cv_from_utility(self._u, self.cv_curve, report, self.goal_flag)
        return {self.value_class: (submarket_cpa(self.value, report), cv)}

    def to_dict(self):
        return {"kind": self.kind, "goal_flag": self.goal_flag, "values": self.values,
                "value_class": self.value_class,
                "knots": {"x": list(self.cv_curve.xs), "y": list(self.cv_curve.ys)}}


def submarket_mechanism(v_h, goal_flag, cv_submarket, value_class="base"):
    if not isinstance(cv_submarket, Curve):
        raise DomainError("cv_submarket must be a Curve")
    return SubmarketMechanism(v_h, goal_flag, cv_submarket, value_class)


def make_submarket_curve(frontier: Curve, goal_flag, margin=DEFAULT_MARGIN, floor=G_FLOOR) -> Curve:
    """Conversion curve over tROI reports whose ROI-weighted utility factor is non-increasing."""
    xs = np.asarray(frontier.xs)
    factor = (1 + xs - goal_flag) / (1 + xs)
    u = factor * margin * np.asarray(frontier.ys)
    env = np.maximum(monotone_envelope(u, increasing=False), floor)
    return Curve.from_arrays(xs, env / factor)


class CompositeMechanism(AggregatedMechanism):
    """Independent per-value-class tROI mechanisms run side by side."""

    kind = "composite"
    constraint = TROI

    def __init__(self, parts: Sequence[SubmarketMechanism]):
        if not parts:
            raise InvalidMechanismError("a composite needs at least one sub-market")
        goals = {p.goal_flag for p in parts}
        if len(goals) != 1:
            raise InvalidMechanismError("sub-markets disagree on the goal flag")
        labels = [p.value_class for p in parts]
        if len(set(labels)) != len(labels):
            raise InvalidMechanismError("duplicate value class among sub-markets")
        lo = max(p.domain[0] for p in parts)
        hi = min(p.domain[1] for p in parts)
        if lo > hi:
            raise InvalidMechanismError("sub-market domains do not overlap")
        super().__init__({p.value_class: p.value for p in parts}, goals.pop(), (lo, hi))
        self.parts = list(parts)

    def deliveries(self, report):
        self._check_domain(report)
        out = {}
        for p in self.parts:
            out.update(p.deliveries(report))
        return out

    def to_dict(self):
        return {"kind": self.kind, "goal_flag": self.goal_flag, "values": self.values,
                "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class LinearDecomposition:
    weights: Mapping[str, object]

    def __post_init__(self):
        if not self.weights:
            raise InvalidMechanismError("decomposition weights are empty")
        if any(k < 0 for k in self.weights.values()):
            raise InvalidMechanismError("decomposition weights must be non-negative")
        total = sum(self.weights.values())
        exact = all(isinstance(k, (int, Fraction)) for k in self.weights.values())
        if (total != 1) if exact else abs(total - 1) > 1e-12:
            raise InvalidMechanismError(f"decomposition weights sum to {total}, not 1")


def decomposed_prices(values, weights, gamma, pricing=PROPORTIONAL):
    """Per-class CPA satisfying ``sum(v_h k_h) = (1 + gamma) * sum(cpa_h k_h)``.

    Pure arithmetic so exact number types (``Fraction``) stay exact.
    """
    if pricing == UNIFORM:
        pooled = sum(values[h] * weights[h] for h in weights)
        return {h: pooled / (1 + gamma) for h in weights}
    if pricing == PROPORTIONAL:
        return {h: values[h] / (1 + gamma) for h in weights}
    raise DomainError(f"unknown pricing rule {pricing!r}")


def price_condition_residual(values, weights, prices, gamma):
    """``sum(v_h k_h) - (1 + gamma) * sum(cpa_h k_h)``; zero when the condition holds."""
    lhs = sum(values[h] * weights[h] for h in weights)
    rhs = (1 + gamma) * sum(prices[h] * weights[h] for h in weights)
    return lhs - rhs


class DecomposedMechanism(AggregatedMechanism):
    """Multi-value tROI mechanism splitting one conversion curve by fixed weights."""

    kind = "decomposed"
    constraint = TROI

    def __init__(self, values, decomposition: LinearDecomposition, cv_curve: Curve, goal_flag,
                 pricing=PROPORTIONAL):
        if set(decomposition.weights) - set(values):
            raise InvalidMechanismError("weights reference unknown value classes")
        if pricing not in (UNIFORM, PROPORTIONAL):
            raise DomainError(f"unknown pricing rule {pricing!r}")
        self._u = _roi_utility_curve(cv_curve, goal_flag)
        super().__init__({h: values[h] for h in decomposition.weights}, goal_flag, cv_curve.domain)
        self.decomposition = decomposition
        self.cv_curve = cv_curve
        self.pricing = pricing

    def prices(self, report):
        return decomposed_prices(self.values, self.decomposition.weights, report, self.pricing)

    def deliveries(self, report):
        self._check_domain(report)
        cv = _cv_from_utility(self._u, self.cv_curve, report, self.goal_flag)
        prices = self.prices(report)
        return {h: (prices[h], float(k) * cv) for h, k in self.decomposition.weights.items()}

    def to_dict(self):
        return {"kind": self.kind, "goal_flag": self.goal_flag, "values": self.values,
                "weights": {h: float(k) for h, k in self.decomposition.weights.items()},
                "pricing": self.pricing,
                "knots": {"x": list(self.cv_curve.xs), "y": list(self.cv_curve.ys)}}


def decomposed_mechanism(values, k: LinearDecomposition, cv_a: Curve, goal_flag,
                         pricing=PROPORTIONAL) -> DecomposedMechanism:
    return DecomposedMechanism(values, k, cv_a, goal_flag, pricing)


class CurveMechanism(AggregatedMechanism):
    """Mechanism from arbitrary callables; used for counterexamples and what-if checks."""

    kind = "custom"

    def __init__(self, value, goal_flag, cpa_fn: Callable, cv_fn: Callable, domain,
                 constraint=TCPA, value_class="base"):
        super().__init__({value_class: value}, goal_flag, domain)
        self.constraint = constraint
        self.value_class = value_class
        self.cpa_fn, self.cv_fn = cpa_fn, cv_fn

    def deliveries(self, report):
        self._check_domain(report)
        return {self.value_class: (self.cpa_fn(report), self.cv_fn(report))}


class PerRequestSpaMechanism:
    """Per-request second-price auction on the reported tCPA (bid = report * cvr per click).

    Has no closed form; it is only evaluated by simulation.
    """

    kind = "cpa_spa"
    constraint = TCPA

    def __init__(self, goal_flag=1):
        self.goal_flag = goal_flag


@dataclass
class Verdict:
    ok: bool
    violations: list = field(default_factory=list)

    @property
    def first(self):
        return self.violations[0] if self.violations else None


def verify_mechanism_ic(mech: AggregatedMechanism, report_grid) -> Verdict:
    """Grid-level check of the price identity and the utility monotonicity.

    tCPA mechanisms must charge exactly the report and have non-decreasing
    utility; tROI mechanisms must deliver exactly the reported ROI and have
    non-increasing utility.
    """
    grid = sorted(float(r) for r in report_grid)
    if len(grid) < 3:
        raise DomainError("verification needs at least three grid points")
    violations = []
    utils = []
    for r in grid:
        if mech.constraint == TCPA:
            delivered = mech.cpa_of_report(r)
        else:
            delivered = mech.roi_of_report(r)
        if abs(delivered - r) > IDENTITY_RTOL * max(abs(r), 1e-300):
            violations.append({"type": "price_identity", "report": r, "delivered": delivered})
        utils.append(mech.utility_of(r))
    for k in range(len(grid) - 1):
        step = utils[k + 1] - utils[k]
        wrong = step < -MONOTONE_ATOL if mech.constraint == TCPA else step > MONOTONE_ATOL
        if wrong:
            violations.append({"type": "monotonicity", "reports": (grid[k], grid[k + 1]),
                               "utilities": (utils[k], utils[k + 1])})
    return Verdict(not violations, violations)


def mechanism_from_dict(data: dict) -> AggregatedMechanism:
    kind = data["kind"]
    goal = int(data["goal_flag"])
    values = {h: float(v) for h, v in data["values"].items()}
    if kind == "composite":
        parts = []
        for p in data["parts"]:
            sub = mechanism_from_dict(p)
            if not isinstance(sub, SubmarketMechanism):
                raise InvalidMechanismError("composite parts must be sub-market mechanisms")
            parts.append(sub)
        return CompositeMechanism(parts)
    curve = Curve.from_arrays(data["knots"]["x"], data["knots"]["y"])
    if kind == "tcpa":
        (h, v), = values.items()
        return TcpaMechanism(v, goal, GFunction(curve.xs, curve.ys), h)
    if kind == "submarket":
        h = data.get("value_class") or next(iter(values))
        return SubmarketMechanism(values[h], goal, curve, h)
    if kind == "decomposed":
        weights = {h: float(k) for h, k in data["weights"].items()}
        return DecomposedMechanism(values, LinearDecomposition(weights), curve, goal,
                                   data.get("pricing", PROPORTIONAL))
    raise InvalidMechanismError(f"unknown mechanism kind {kind!r}")
