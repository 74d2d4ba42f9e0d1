"""Time the compiled kernels against the pure-Python fallback on the reference market.

    python3 benchmarks/bench_kernels.py [--requests N] [--repeat R]

Both backends run the same inputs; the script also checks that they agree.
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from autobid import _core
from autobid.bidding import bid_per_conversion
from autobid.control import run_episode
from autobid.market import TCPA
from autobid.reference import REFERENCE_CONTROL, REFERENCE_SCENARIO, reference_draw


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--requests", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    config = replace(REFERENCE_SCENARIO, requests=args.requests)
    draw = reference_draw(0, config=config)
    packed = draw.scenario.packed
    coef = bid_per_conversion(1, TCPA, 3.25, 10.0) * packed.auto_cvr
    indices = np.arange(packed.n_requests, dtype=np.int64)
    cpa, cv = draw.mechanism.deliveries(3.25)["base"]
    params = REFERENCE_CONTROL.kernel_params()

    backends = _core.backends()
    if "compiled" not in backends:
        print("compiled kernels are not built; only the fallback is available")
    print(f"{'kernel':<16}{'backend':<10}{'seconds':>10}")
    results = {}
    for name, mod in backends.items():
        t_oracle, totals = best_of(lambda: mod.oracle_totals(packed, coef, 1.0), args.repeat)
        t_loop, out = best_of(lambda: mod.run_controlled(packed, indices, 10.0, 1, cpa, cv, params),
                              args.repeat)
        results[name] = (totals, out)
        print(f"{'oracle_totals':<16}{name:<10}{t_oracle:>10.4f}")
        print(f"{'run_controlled':<16}{name:<10}{t_loop:>10.4f}")

    if len(results) == 2:
        (ta, oa), (tb, ob) = results["python"], results["compiled"]
        same = ta == tb and all(np.array_equal(oa[k], ob[k]) for k in oa)
        print(f"backends agree: {same}")

    t_ep, _ = best_of(lambda: run_episode(draw.scenario, draw.profile, draw.mechanism, 3.25,
                                          REFERENCE_CONTROL), 1)
    print(f"full episode ({_core.BACKEND}): {t_ep:.3f}s")


if __name__ == "__main__":
    main()
