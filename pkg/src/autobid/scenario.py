"""Seeded synthetic scenario generation."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .market import AdRequest, AdvertiserProfile, Scenario, Slot

DEFAULT_POSITION_FACTORS = (1.0, 0.7, 0.5, 0.35, 0.25)


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose, derived from one root seed."""
    return np.random.default_rng([int(root_seed), zlib.crc32(name.encode("utf-8"))])


@dataclass(frozen=True)
class ScenarioConfig:
    """Distributions for a synthetic request stream.

    Supports are closed intervals; zero-width supports pin a quantity. Competitor
    per-click bids are log-normal: each competitor draws a base bid once
    (median ``bid_median``, log-sd ``bid_spread``) and perturbs it per request
    with log-sd ``bid_noise``.

    ``fixed_competitor_bids`` replaces the random competitor draw with an
    explicit list, one ``{competitor_id: bid}`` map per request.
    """

    requests: int = 10_000
    slots_min: int = 1
    slots_max: int = 3
    position_factors: tuple = DEFAULT_POSITION_FACTORS
    competitor_pool: int = 30
    competitors_min: int = 2
    competitors_max: int = 6
    bid_median: float = 1.0
    bid_spread: float = 0.4
    bid_noise: float = 0.25
    quality_low: float = 0.02
    quality_high: float = 0.10
    cvr_low: float = 0.05
    cvr_high: float = 0.30
    value_mix: Mapping[str, float] | None = None
    reserve: float = 0.0
    fixed_competitor_bids: Sequence[Mapping[str, float]] | None = None

    def validate(self):
        if self.requests < 0:
            raise ConfigError("request count must be non-negative", "scenario.requests")
        if not 1 <= self.slots_min <= self.slots_max:
            raise ConfigError("need 1 <= slots_min <= slots_max", "scenario.slots_min")
        if self.slots_max > len(self.position_factors):
            raise ConfigError("not enough position factors for slots_max", "scenario.position_factors")
        pf = self.position_factors
        if any(not 0 < f <= 1 for f in pf) or any(b >= a for a, b in zip(pf, pf[1:])):
            raise ConfigError("position factors must be strictly decreasing in (0, 1]",
                              "scenario.position_factors")
        if not 0 <= self.competitors_min <= self.competitors_max:
            raise ConfigError("need 0 <= competitors_min <= competitors_max", "scenario.competitors_min")
        if self.fixed_competitor_bids is None and self.competitors_max > self.competitor_pool:
            raise ConfigError("competitors_max exceeds the pool", "scenario.competitor_pool")
        for name in ("bid_median",):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", f"scenario.{name}")
        for name in ("bid_spread", "bid_noise", "reserve"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative", f"scenario.{name}")
        for lo, hi in (("quality_low", "quality_high"), ("cvr_low", "cvr_high")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not 0 < a <= b <= 1:
                raise ConfigError(f"need 0 < {lo} <= {hi} <= 1", f"scenario.{lo}")
        if self.value_mix is not None and any(w < 0 for w in self.value_mix.values()):
            raise ConfigError("value-class weights must be non-negative", "scenario.value_mix")


def _uniform(rng, lo, hi, size=None):
    # Zero-width supports are pinned without consuming a different number of draws.
    draw = rng.uniform(0.0, 1.0, size)
    return lo + (hi - lo) * draw


def generate_scenario(config: ScenarioConfig, seed: int, auto_bidder: AdvertiserProfile) -> Scenario:
    """Draw a deterministic scenario for ``seed``. Every request matches the auto-bidder."""
    config.validate()
    rng = substream(seed, "scenario")
    aid = auto_bidder.advertiser_id

    mix = dict(config.value_mix) if config.value_mix else {h: 1.0 for h in auto_bidder.values}
    unknown = set(mix) - set(auto_bidder.values)
    if unknown:
        raise ConfigError(f"value classes {sorted(unknown)} unknown to the advertiser", "scenario.value_mix")
    labels = sorted(mix)
    weights = np.array([mix[h] for h in labels], dtype=float)
    if weights.sum() <= 0:
        raise ConfigError("value-class weights sum to zero", "scenario.value_mix")
    weights = weights / weights.sum()

    fixed = config.fixed_competitor_bids
    n = len(fixed) if fixed is not None else config.requests
    pool = [f"c{i:03d}" for i in range(config.competitor_pool)]
    base_bid = config.bid_median * np.exp(config.bid_spread * rng.standard_normal(len(pool)))

    requests, bids = [], {}
    for j in range(n):
        rid = j + 1
        n_slots = int(rng.integers(config.slots_min, config.slots_max + 1))
        slots = tuple(Slot(k + 1, config.position_factors[k]) for k in range(n_slots))
        if fixed is not None:
            comp_bids = {adv: float(b) for adv, b in fixed[j].items()}
        else:
            n_comp = int(rng.integers(config.competitors_min, config.competitors_max + 1))
            chosen = np.sort(rng.choice(len(pool), size=n_comp, replace=False))
            noise = np.exp(config.bid_noise * rng.standard_normal(n_comp))
            comp_bids = {pool[i]: float(base_bid[i] * e) for i, e in zip(chosen, noise)}
        matched = (aid, *comp_bids)
        q = _uniform(rng, config.quality_low, config.quality_high, len(matched))
        c = _uniform(rng, config.cvr_low, config.cvr_high, len(matched))
        h = labels[int(rng.choice(len(labels), p=weights))]
        requests.append(AdRequest(
            rid, h, slots, matched,
            {adv: float(x) for adv, x in zip(matched, q)},
            {adv: float(x) for adv, x in zip(matched, c)},
        ))
        for adv, b in comp_bids.items():
            bids[(rid, adv)] = b
    return Scenario(seed, tuple(requests), bids, auto_bidder, config.reserve)


def example1_scenario(value=10.0, tcpa=4.0) -> Scenario:
    """The two-request single-slot market with unit ctr and cvr where the auto-bidder
    faces tCPA bids {5, 2, 1} in request 1 and {1} in request 2."""
    config = ScenarioConfig(
        slots_min=1, slots_max=1, quality_low=1.0, quality_high=1.0, cvr_low=1.0, cvr_high=1.0,
        fixed_competitor_bids=({"b": 5.0, "c": 2.0, "d": 1.0}, {"d": 1.0}),
    )
    return generate_scenario(config, 0, AdvertiserProfile.tcpa("a", value, tcpa))
