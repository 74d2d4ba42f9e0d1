"""Pure-Python implementations of the hot loops, used when the compiled kernel is absent."""
import math

import numpy as np

from ._ops import choose_bid, ecs_update, ics_target, predict_outcome

BACKEND = "python"


def oracle_totals(packed, coef, k):
    """Episode ``(conversions, spend)`` when the auto-bidder bids ``k * coef[j]`` per click
    against the actual competitor bids."""
    cv_total = 0.0
    spend_total = 0.0
    reserve = packed.reserve
    slot_ptr, theta = packed.slot_ptr, packed.theta
    comp_ptr = packed.comp_ptr
    q_all, cvr_all = packed.auto_quality, packed.auto_cvr
    scores_all = (packed.comp_bid * packed.comp_quality).tolist()
    keys_all = packed.comp_key.tolist()
    bids_all = packed.comp_bid.tolist()
    theta_l = theta.tolist()
    for j in range(packed.n_requests):
        a, b = int(comp_ptr[j]), int(comp_ptr[j + 1])
        s0, s1 = int(slot_ptr[j]), int(slot_ptr[j + 1])
        q_a = float(q_all[j])
        bid = k * float(coef[j])
        slot, price = predict_outcome(bid, q_a, packed.auto_key, scores_all[a:b], keys_all[a:b],
                                      bids_all[a:b], theta_l[s0:s1], reserve)
        if slot >= 0:
            ctr = q_a * theta_l[s0 + slot]
            cv_total += ctr * float(cvr_all[j])
            spend_total += price * ctr
    return cv_total, spend_total


def run_controlled(packed, indices, value, goal_flag, cpa_goal, cv_goal, params):
    """Run the per-request control loop over ``indices`` (in order).

    ``params`` is ``(kp, ki, kd, alpha_ratio, beta_ratio, beta_floor, mult_min,
    mult_max, p_min, w_c, w_v, integral_limit)``. Returns a dict of per-request
    arrays.
    """
    (kp, ki, kd, alpha_ratio, beta_ratio, beta_floor, mult_min, mult_max, p_min,
     w_c, w_v, integral_limit) = [float(p) for p in params]
    indices = [int(j) for j in indices]
    m = len(indices)
    out = {
        "slot": np.full(m, -1, dtype=np.int64),
        "bid": np.zeros(m), "price": np.zeros(m), "cv": np.zeros(m), "spend": np.zeros(m),
        "feasible": np.zeros(m, dtype=np.int8), "cpa_slack": np.zeros(m), "cv_slack": np.zeros(m),
        "multiplier": np.zeros(m), "participated": np.zeros(m, dtype=np.int8),
        "tcpa": np.zeros(m), "tcv": np.zeros(m),
    }
    reserve = packed.reserve
    auto_key = int(packed.auto_key)
    comp_ptr, slot_ptr = packed.comp_ptr, packed.slot_ptr
    comp_idx = packed.comp_index.tolist()
    keys_all = packed.comp_key.tolist()
    q_c_all = packed.comp_quality.tolist()
    bids_all = packed.comp_bid.tolist()
    theta_l = packed.theta.tolist()

    last = [math.nan] * packed.n_competitors
    tot = 0.0
    cnt = 0
    x = spend = integral = prev_error = credit = 0.0
    mult = participation = 1.0
    for pos, j in enumerate(indices):
        a, b = int(comp_ptr[j]), int(comp_ptr[j + 1])
        s0, s1 = int(slot_ptr[j]), int(slot_ptr[j + 1])
        q_a = float(packed.auto_quality[j])
        cvr = float(packed.auto_cvr[j])
        thetas = theta_l[s0:s1]
        keys = keys_all[a:b]

        tcpa, tcv, alpha, beta = ics_target(x, spend, cpa_goal, cv_goal, m - pos,
                                            alpha_ratio, beta_ratio, beta_floor)
        fallback = tot / cnt if cnt > 0 else reserve
        est_bids = []
        est_scores = []
        for c in range(a, b):
            e = last[comp_idx[c]]
            if e != e:
                e = fallback
            est_bids.append(e)
            est_scores.append(e * q_c_all[c])
        bid, _, _, _, feasible, cpa_slack, cv_slack = choose_bid(
            q_a, auto_key, est_scores, keys, est_bids, thetas, cvr, reserve, value, goal_flag,
            tcpa, tcv, alpha, beta, beta_floor, mult, w_c, w_v)

        credit += participation
        if credit >= 1.0:
            credit -= 1.0
            out["participated"][pos] = 1
        else:
            bid = 0.0

        act_bids = bids_all[a:b]
        act_scores = [act_bids[c] * q_c_all[a + c] for c in range(b - a)]
        slot, price = predict_outcome(bid, q_a, auto_key, act_scores, keys, act_bids, thetas, reserve)
        cv = cost = 0.0
        if slot >= 0:
            ctr = q_a * thetas[slot]
            cv = ctr * cvr
            cost = price * ctr
        x += cv
        spend += cost
        for c in range(a, b):
            bc = bids_all[c]
            last[comp_idx[c]] = bc
            tot += bc
            cnt += 1
        integral, prev_error, mult, participation = ecs_update(
            x, spend, cpa_goal, cv_goal, (pos + 1) / m, integral, prev_error, mult,
            participation, kp, ki, kd, mult_min, mult_max, p_min, integral_limit)

        out["slot"][pos] = slot
        out["bid"][pos] = bid
        out["price"][pos] = price
        out["cv"][pos] = cv
        out["spend"][pos] = cost
        out["feasible"][pos] = 1 if feasible else 0
        out["cpa_slack"][pos] = cpa_slack
        out["cv_slack"][pos] = cv_slack
        out["multiplier"][pos] = mult
        out["tcpa"][pos] = tcpa
        out["tcv"][pos] = tcv
    return out
