import numpy as np
import pytest

from autobid import _core, _fallback
from autobid.bidding import bid_per_conversion
from autobid.control import ControlConfig
from autobid.market import AdvertiserProfile
from autobid.scenario import ScenarioConfig, generate_scenario

compiled = _core.backends().get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")

CONFIGS = [
    ScenarioConfig(requests=400),
    ScenarioConfig(requests=400, reserve=0.3, bid_noise=0.0),
    ScenarioConfig(requests=400, slots_min=1, slots_max=5, competitors_min=0, competitors_max=8),
    ScenarioConfig(requests=300, value_mix={"base": 1.0}, quality_low=0.5, quality_high=1.0),
]


def setups():
    for k, cfg in enumerate(CONFIGS):
        for seed in (0, 1):
            p = AdvertiserProfile.tcpa("a", 10.0, 4.0)
            yield pytest.param(generate_scenario(cfg, seed, p), id=f"cfg{k}-seed{seed}")


@needs_compiled
@pytest.mark.parametrize("scenario", list(setups()))
def test_oracle_totals_identical(scenario):
    packed = scenario.packed
    for t in (1.0, 3.0, 6.0):
        coef = bid_per_conversion(1, "tcpa", t, 10.0) * packed.auto_cvr
        for k in (0.0, 0.3, 1.0, 4.0):
            assert compiled.oracle_totals(packed, coef, k) == _fallback.oracle_totals(packed, coef, k)


@needs_compiled
@pytest.mark.parametrize("scenario", list(setups()))
@pytest.mark.parametrize("control", [ControlConfig(), ControlConfig(alpha_ratio=0.1, kd=0.05)])
def test_controlled_loop_identical(scenario, control):
    packed = scenario.packed
    idx = np.arange(packed.n_requests, dtype=np.int64)
    for cpa, cv in ((3.0, 2.0), (6.0, 40.0)):
        a = compiled.run_controlled(packed, idx, 10.0, 1, cpa, cv, control.kernel_params())
        b = _fallback.run_controlled(packed, idx, 10.0, 1, cpa, cv, control.kernel_params())
        assert a.keys() == b.keys()
        for key in a:
            assert np.array_equal(np.asarray(a[key]), np.asarray(b[key])), key


def test_wide_requests_use_the_fallback():
    bids = [{f"c{k:03d}": 1.0 + k / 1000 for k in range(300)}]
    cfg = ScenarioConfig(slots_min=1, slots_max=1, fixed_competitor_bids=bids)
    sc = generate_scenario(cfg, 0, AdvertiserProfile.tcpa("a", 10.0, 4.0))
    assert sc.packed.max_competitors == 300
    if compiled is not None:
        assert _core._pick(sc.packed) is _fallback
    coef = np.full(1, 2.0)
    assert _core.oracle_totals(sc.packed, coef, 1.0) == _fallback.oracle_totals(sc.packed, coef, 1.0)


def test_backend_name():
    assert _core.BACKEND in ("compiled", "python")
