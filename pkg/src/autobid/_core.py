"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting ``AUTOBID_PURE_PYTHON=1``
forces the pure-Python fallback.
"""
import os

from . import _fallback

if os.environ.get("AUTOBID_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _fallback

BACKEND = _impl.BACKEND


def _pick(packed):
    # the compiled kernel keeps per-request competitor data in fixed-size buffers
    limit = getattr(_impl, "MAX_COMPETITORS", None)
    if limit is not None and packed.max_competitors > limit:
        return _fallback
    return _impl


def oracle_totals(packed, coef, k):
    return _pick(packed).oracle_totals(packed, coef, k)


def run_controlled(packed, indices, value, goal_flag, cpa_goal, cv_goal, params):
    return _pick(packed).run_controlled(packed, indices, value, goal_flag, cpa_goal, cv_goal,
                                        params)


def backends():
    """Every importable backend module keyed by name."""
    found = {"python": _fallback}
    try:
        from . import _kernels
        found["compiled"] = _kernels
    except ImportError:
        pass
    return found
