"""Scalar primitives of the per-request control loop.

These are the reference semantics; ``_kernels.pyx`` reimplements them in C with the
same operation order so both backends produce identical floats.
"""
import math

from .errors import PlanningError

# Relative step used for "just above a competitor's score" candidate bids.
BID_BUMP = 1e-9
# Smallest positive bid; lets the bidder take an unopposed slot when the reserve is zero.
MIN_BID = 1e-9
# Bound on the blended PID error; a near-zero conversion count would otherwise make
# the CPA error overflow and the derivative term evaluate to inf - inf.
ERROR_LIMIT = 1e6


def eligible(bid, reserve):
    return bid > 0.0 and bid >= reserve


def predict_outcome(bid, q_a, auto_key, scores, keys, bids, thetas, reserve):
    """Slot index (or -1) and per-click price of the auto-bidder against a bid profile."""
    if not eligible(bid, reserve):
        return -1, 0.0
    s = bid * q_a
    ahead = 0
    next_score = 0.0
    for c in range(len(scores)):
        if not eligible(bids[c], reserve):
            continue
        sc = scores[c]
        if sc > s or (sc == s and keys[c] < auto_key):
            ahead += 1
        elif sc > next_score:
            next_score = sc
    if ahead >= len(thetas):
        return -1, 0.0
    price = max(next_score, reserve * q_a) / q_a
    if price > bid:
        price = bid
    return ahead, price


def ics_target(x, spend, cpa_goal, cv_goal, remaining, alpha_ratio, beta_ratio, beta_floor):
    """Equal split of the remaining conversions and spend over the remaining requests."""
    if remaining < 1:
        raise PlanningError("no requests remain to plan for")
    if x >= cv_goal:
        tcv = 0.0
        tcpa = spend / x if x > 0.0 else 0.0
    else:
        tcv = (cv_goal - x) / remaining
        tcpa = (cpa_goal * cv_goal - spend) / (cv_goal - x)
        if tcpa < 0.0:
            tcpa = 0.0
    alpha = alpha_ratio * tcpa
    beta = beta_ratio * (tcv if tcv > beta_floor else beta_floor)
    return tcpa, tcv, alpha, beta


def slack(cpa, cv, tcpa, tcv, alpha, beta, beta_floor):
    """Normalized band excesses ``(cpa_slack, cv_slack)``; zero inside the bands.

    A losing outcome has no CPA, so its CPA band is vacuous.
    """
    cpa_slack = 0.0
    if cv > 0.0:
        excess = abs(cpa - tcpa) - alpha
        if excess > 0.0:
            cpa_slack = excess / (tcpa if tcpa > 0.0 else 1e-12)
    excess = abs(cv - tcv) - beta
    cv_slack = excess / (tcv if tcv > beta_floor else beta_floor) if excess > 0.0 else 0.0
    return cpa_slack, cv_slack


def choose_bid(q_a, auto_key, scores, keys, bids, thetas, cvr, reserve, value, goal_flag,
               tcpa, tcv, alpha, beta, beta_floor, multiplier, w_c, w_v):
    """Pick the per-click bid for one request against an estimated bid profile.

    Candidates are: no bid, the smallest admissible bid, and a bid just above each
    eligible competitor score. Among candidates inside both target bands the one
    with the highest ``(v - I*cpa) * cv`` wins; when none is inside, the one with
    the smallest weighted normalized excess wins. Ties keep the lower bid. The
    result is scaled by ``multiplier`` unless that changes the predicted slot.

    Returns ``(bid, slot, cpa, cv, feasible, cpa_slack, cv_slack)``.
    """
    floor_bid = reserve * (1.0 + BID_BUMP) if reserve > 0.0 else MIN_BID
    cands = [0.0, floor_bid]
    for c in range(len(scores)):
        if eligible(bids[c], reserve):
            b = scores[c] / q_a * (1.0 + BID_BUMP)
            cands.append(b if b > floor_bid else floor_bid)
    cands.sort()

    seen = set()
    best = None  # (bid, slot, cpa, cv, cpa_slack, cv_slack)
    best_util = -math.inf
    fallback = None
    fallback_score = math.inf
    for b in cands:
        slot, price = predict_outcome(b, q_a, auto_key, scores, keys, bids, thetas, reserve)
        if slot in seen:
            continue
        seen.add(slot)
        if slot >= 0:
            cv = q_a * thetas[slot] * cvr
            cpa = price / cvr
        else:
            cv = 0.0
            cpa = 0.0
        cpa_slack, cv_slack = slack(cpa, cv, tcpa, tcv, alpha, beta, beta_floor)
        if cpa_slack == 0.0 and cv_slack == 0.0:
            util = (value - goal_flag * cpa) * cv
            if util > best_util:
                best_util = util
                best = (b, slot, cpa, cv, cpa_slack, cv_slack)
        elif best is None:
            score = w_c * cpa_slack + w_v * cv_slack
            if score < fallback_score:
                fallback_score = score
                fallback = (b, slot, cpa, cv, cpa_slack, cv_slack)

    feasible = best is not None
    b, slot, cpa, cv, cpa_slack, cv_slack = best if feasible else fallback
    if b > 0.0 and multiplier != 1.0:
        scaled = b * multiplier
        s2, _ = predict_outcome(scaled, q_a, auto_key, scores, keys, bids, thetas, reserve)
        if s2 == slot:
            b = scaled
    return b, slot, cpa, cv, feasible, cpa_slack, cv_slack


def ecs_update(x, spend, cpa_goal, cv_goal, progress, integral, prev_error, multiplier,
               participation, kp, ki, kd, mult_min, mult_max, p_min, integral_limit):
    """One PID step on the blended CPA and pacing error.

    Returns ``(integral, error, multiplier, participation)``.
    """
    e_cpa = (spend / x - cpa_goal) / cpa_goal if x > 0.0 and cpa_goal > 0.0 else 0.0
    e_pace = x / cv_goal - progress if cv_goal > 0.0 else 0.0
    e = 0.5 * e_cpa + 0.5 * e_pace
    if e > ERROR_LIMIT:
        e = ERROR_LIMIT
    elif e < -ERROR_LIMIT:
        e = -ERROR_LIMIT
    integral = integral + e
    if integral > integral_limit:
        integral = integral_limit
    elif integral < -integral_limit:
        integral = -integral_limit
    u = kp * e + ki * integral + kd * (e - prev_error)
    multiplier = multiplier * math.exp(-u)
    if multiplier < mult_min:
        multiplier = mult_min
    elif multiplier > mult_max:
        multiplier = mult_max
    if e_pace > 0.0 and e_cpa > 0.0:
        participation = participation * math.exp(-kp * e)
        if participation < p_min:
            participation = p_min
    else:
        participation = participation + kp * (1.0 - participation)
        if participation > 1.0:
            participation = 1.0
    return integral, e, multiplier, participation
