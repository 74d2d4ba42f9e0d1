# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics and floating-point operation order follow ``_ops.py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()

BACKEND = "compiled"

cdef double BID_BUMP = 1e-9
cdef double MIN_BID = 1e-9
cdef double ERROR_LIMIT = 1e6
DEF MAX_COMP = 256
MAX_COMPETITORS = MAX_COMP


cdef inline bint _eligible(double bid, double reserve) nogil:
    return bid > 0.0 and bid >= reserve


cdef inline int _predict(double bid, double q_a, long auto_key, double* scores, long* keys,
                         double* bids, int n_comp, int n_slots, double reserve,
                         double* price_out) noexcept nogil:
    cdef double s, sc, next_score, price
    cdef int ahead = 0, c
    price_out[0] = 0.0
    if not _eligible(bid, reserve):
        return -1
    s = bid * q_a
    next_score = 0.0
    for c in range(n_comp):
        if not _eligible(bids[c], reserve):
            continue
        sc = scores[c]
        if sc > s or (sc == s and keys[c] < auto_key):
            ahead += 1
        elif sc > next_score:
            next_score = sc
    if ahead >= n_slots:
        return -1
    price = (next_score if next_score > reserve * q_a else reserve * q_a) / q_a
    if price > bid:
        price = bid
    price_out[0] = price
    return ahead


def oracle_totals(packed, const double[::1] coef, double k):
    cdef const long[::1] slot_ptr = packed.slot_ptr
    cdef const double[::1] theta = packed.theta
    cdef const long[::1] comp_ptr = packed.comp_ptr
    cdef const long[::1] comp_key = packed.comp_key
    cdef const double[::1] comp_q = packed.comp_quality
    cdef const double[::1] comp_bid = packed.comp_bid
    cdef const double[::1] q_all = packed.auto_quality
    cdef const double[::1] cvr_all = packed.auto_cvr
    cdef double reserve = packed.reserve
    cdef long auto_key = packed.auto_key
    cdef Py_ssize_t n = q_all.shape[0], j, a, b, c
    cdef double scores[MAX_COMP]
    cdef long keys[MAX_COMP]
    cdef double bids[MAX_COMP]
    cdef double cv_total = 0.0, spend_total = 0.0, price, q_a, ctr
    cdef int slot, n_comp
    with nogil:
        for j in range(n):
            a = comp_ptr[j]
            b = comp_ptr[j + 1]
            n_comp = <int>(b - a)
            for c in range(n_comp):
                bids[c] = comp_bid[a + c]
                scores[c] = comp_bid[a + c] * comp_q[a + c]
                keys[c] = comp_key[a + c]
            q_a = q_all[j]
            slot = _predict(k * coef[j], q_a, auto_key, scores, keys, bids, n_comp,
                            <int>(slot_ptr[j + 1] - slot_ptr[j]), reserve, &price)
            if slot >= 0:
                ctr = q_a * theta[slot_ptr[j] + slot]
                cv_total += ctr * cvr_all[j]
                spend_total += price * ctr
    return cv_total, spend_total


cdef inline void _slack(double cpa, double cv, double tcpa, double tcv, double alpha,
                        double beta, double beta_floor, double* cpa_slack,
                        double* cv_slack) noexcept nogil:
    cdef double excess
    cpa_slack[0] = 0.0
    if cv > 0.0:
        excess = fabs(cpa - tcpa) - alpha
        if excess > 0.0:
            cpa_slack[0] = excess / (tcpa if tcpa > 0.0 else 1e-12)
    excess = fabs(cv - tcv) - beta
    if excess > 0.0:
        cv_slack[0] = excess / (tcv if tcv > beta_floor else beta_floor)
    else:
        cv_slack[0] = 0.0


def run_controlled(packed, indices, double value, int goal_flag, double cpa_goal,
                   double cv_goal, params):
    cdef double kp, ki, kd, alpha_ratio, beta_ratio, beta_floor, mult_min, mult_max
    cdef double p_min, w_c, w_v, integral_limit
    (kp, ki, kd, alpha_ratio, beta_ratio, beta_floor, mult_min, mult_max, p_min,
     w_c, w_v, integral_limit) = [float(p) for p in params]

    cdef const long[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const long[::1] slot_ptr = packed.slot_ptr
    cdef const double[::1] theta = packed.theta
    cdef const long[::1] comp_ptr = packed.comp_ptr
    cdef const long[::1] comp_index = packed.comp_index
    cdef const long[::1] comp_key = packed.comp_key
    cdef const double[::1] comp_q = packed.comp_quality
    cdef const double[::1] comp_bid = packed.comp_bid
    cdef const double[::1] q_all = packed.auto_quality
    cdef const double[::1] cvr_all = packed.auto_cvr
    cdef double reserve = packed.reserve
    cdef long auto_key = packed.auto_key
    cdef Py_ssize_t m = idx.shape[0]

    slot_arr = np.full(m, -1, dtype=np.int64)
    bid_arr = np.zeros(m); price_arr = np.zeros(m); cv_arr = np.zeros(m); spend_arr = np.zeros(m)
    feas_arr = np.zeros(m, dtype=np.int8); cs_arr = np.zeros(m); vs_arr = np.zeros(m)
    mult_arr = np.zeros(m); part_arr = np.zeros(m, dtype=np.int8)
    tcpa_arr = np.zeros(m); tcv_arr = np.zeros(m)
    cdef long[::1] o_slot = slot_arr
    cdef double[::1] o_bid = bid_arr, o_price = price_arr, o_cv = cv_arr, o_spend = spend_arr
    cdef signed char[::1] o_feas = feas_arr, o_part = part_arr
    cdef double[::1] o_cs = cs_arr, o_vs = vs_arr, o_mult = mult_arr
    cdef double[::1] o_tcpa = tcpa_arr, o_tcv = tcv_arr

    last_arr = np.full(max(packed.n_competitors, 1), np.nan)
    cdef double[::1] last = last_arr

    cdef double est_scores[MAX_COMP]
    cdef double est_bids[MAX_COMP]
    cdef double act_scores[MAX_COMP]
    cdef double act_bids[MAX_COMP]
    cdef long keys[MAX_COMP]
    cdef double cands[MAX_COMP + 2]
    cdef char seen[MAX_COMP + 2]
    cdef double tot = 0.0, x = 0.0, spend = 0.0, integral = 0.0, prev_error = 0.0
    cdef double credit = 0.0, mult = 1.0, participation = 1.0
    cdef long cnt = 0
    cdef Py_ssize_t pos, j, a, b, c, i, n_cand
    cdef int n_comp, n_slots, slot, s2, best_slot, fb_slot
    cdef double q_a, cvr, tcpa, tcv, alpha, beta, fallback, e, floor_bid, bb, tmp
    cdef double price, cv, cpa, cpa_slack, cv_slack, util, best_util, score, fb_score
    cdef double best_bid, best_cs, best_vs, fb_bid, fb_cs, fb_vs, chosen_bid, scaled
    cdef double chosen_cs, chosen_vs, ctr, cost, e_cpa, e_pace, err, u, remaining
    cdef bint feasible, have_best
    cdef long s0

    with nogil:
        for pos in range(m):
            j = idx[pos]
            a = comp_ptr[j]
            b = comp_ptr[j + 1]
            n_comp = <int>(b - a)
            s0 = slot_ptr[j]
            n_slots = <int>(slot_ptr[j + 1] - s0)
            q_a = q_all[j]
            cvr = cvr_all[j]

            # interior target: equal split of what remains
            remaining = <double>(m - pos)
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

            # estimated competitor profile
            fallback = tot / cnt if cnt > 0 else reserve
            for c in range(n_comp):
                e = last[comp_index[a + c]]
                if e != e:
                    e = fallback
                est_bids[c] = e
                est_scores[c] = e * comp_q[a + c]
                keys[c] = comp_key[a + c]

            # candidate bids, ascending
            floor_bid = reserve * (1.0 + BID_BUMP) if reserve > 0.0 else MIN_BID
            cands[0] = 0.0
            cands[1] = floor_bid
            n_cand = 2
            for c in range(n_comp):
                if _eligible(est_bids[c], reserve):
                    bb = est_scores[c] / q_a * (1.0 + BID_BUMP)
                    cands[n_cand] = bb if bb > floor_bid else floor_bid
                    n_cand += 1
            for i in range(1, n_cand):
                tmp = cands[i]
                c = i - 1
                while c >= 0 and cands[c] > tmp:
                    cands[c + 1] = cands[c]
                    c -= 1
                cands[c + 1] = tmp
            for i in range(n_slots + 2):
                seen[i] = 0

            have_best = False
            best_util = -INFINITY
            fb_score = INFINITY
            best_bid = fb_bid = 0.0
            best_slot = fb_slot = -1
            best_cs = best_vs = fb_cs = fb_vs = 0.0
            for i in range(n_cand):
                bb = cands[i]
                slot = _predict(bb, q_a, auto_key, est_scores, keys, est_bids, n_comp, n_slots,
                                reserve, &price)
                if seen[slot + 1]:
                    continue
                seen[slot + 1] = 1
                if slot >= 0:
                    cv = q_a * theta[s0 + slot] * cvr
                    cpa = price / cvr
                else:
                    cv = 0.0
                    cpa = 0.0
                _slack(cpa, cv, tcpa, tcv, alpha, beta, beta_floor, &cpa_slack, &cv_slack)
                if cpa_slack == 0.0 and cv_slack == 0.0:
                    util = (value - goal_flag * cpa) * cv
                    if util > best_util:
                        best_util = util
                        have_best = True
                        best_bid = bb
                        best_slot = slot
                        best_cs = cpa_slack
                        best_vs = cv_slack
                elif not have_best:
                    score = w_c * cpa_slack + w_v * cv_slack
                    if score < fb_score:
                        fb_score = score
                        fb_bid = bb
                        fb_slot = slot
                        fb_cs = cpa_slack
                        fb_vs = cv_slack
            feasible = have_best
            if feasible:
                chosen_bid = best_bid
                slot = best_slot
                chosen_cs = best_cs
                chosen_vs = best_vs
            else:
                chosen_bid = fb_bid
                slot = fb_slot
                chosen_cs = fb_cs
                chosen_vs = fb_vs
            if chosen_bid > 0.0 and mult != 1.0:
                scaled = chosen_bid * mult
                s2 = _predict(scaled, q_a, auto_key, est_scores, keys, est_bids, n_comp, n_slots,
                              reserve, &price)
                if s2 == slot:
                    chosen_bid = scaled

            credit += participation
            if credit >= 1.0:
                credit -= 1.0
                o_part[pos] = 1
            else:
                chosen_bid = 0.0

            # actual auction
            for c in range(n_comp):
                act_bids[c] = comp_bid[a + c]
                act_scores[c] = act_bids[c] * comp_q[a + c]
            slot = _predict(chosen_bid, q_a, auto_key, act_scores, keys, act_bids, n_comp,
                            n_slots, reserve, &price)
            cv = 0.0
            cost = 0.0
            if slot >= 0:
                ctr = q_a * theta[s0 + slot]
                cv = ctr * cvr
                cost = price * ctr
            x += cv
            spend += cost
            for c in range(n_comp):
                last[comp_index[a + c]] = comp_bid[a + c]
                tot += comp_bid[a + c]
                cnt += 1

            # exterior PID step
            e_cpa = (spend / x - cpa_goal) / cpa_goal if x > 0.0 and cpa_goal > 0.0 else 0.0
            e_pace = x / cv_goal - (<double>(pos + 1)) / (<double>m) if cv_goal > 0.0 else 0.0
            err = 0.5 * e_cpa + 0.5 * e_pace
            if err > ERROR_LIMIT:
                err = ERROR_LIMIT
            elif err < -ERROR_LIMIT:
                err = -ERROR_LIMIT
            integral = integral + err
            if integral > integral_limit:
                integral = integral_limit
            elif integral < -integral_limit:
                integral = -integral_limit
            u = kp * err + ki * integral + kd * (err - prev_error)
            prev_error = err
            mult = mult * exp(-u)
            if mult < mult_min:
                mult = mult_min
            elif mult > mult_max:
                mult = mult_max
            if e_pace > 0.0 and e_cpa > 0.0:
                participation = participation * exp(-kp * err)
                if participation < p_min:
                    participation = p_min
            else:
                participation = participation + kp * (1.0 - participation)
                if participation > 1.0:
                    participation = 1.0

            o_slot[pos] = slot
            o_bid[pos] = chosen_bid
            o_price[pos] = price
            o_cv[pos] = cv
            o_spend[pos] = cost
            o_feas[pos] = 1 if feasible else 0
            o_cs[pos] = chosen_cs
            o_vs[pos] = chosen_vs
            o_mult[pos] = mult
            o_tcpa[pos] = tcpa
            o_tcv[pos] = tcv

    return {
        "slot": slot_arr, "bid": bid_arr, "price": price_arr, "cv": cv_arr, "spend": spend_arr,
        "feasible": feas_arr, "cpa_slack": cs_arr, "cv_slack": vs_arr, "multiplier": mult_arr,
        "participated": part_arr, "tcpa": tcpa_arr, "tcv": tcv_arr,
    }
