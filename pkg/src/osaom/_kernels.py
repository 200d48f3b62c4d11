"""Compiled mini-step kernels.

A model for one dependent variable is packed as a tuple
``(codes, iparams, fparams, theta)``:

* network effects: ``iparams = (actor covariate row or -1 for behavior,
  interaction covariate row, dyadic covariate index)``,
  ``fparams = (center, range, similarity mean)``
* behavior effects: ``iparams = (network ref: 0 weak, 1 strong, 2 + k dyadic k, ., .)``,
  ``fparams = (mean z, range z, mean similarity z)``

Change statistics are the gain in ``s_ik`` from tie ``i -> j`` being present
rather than absent, all other ties fixed.
"""
import math

import numpy as np
from numba import njit

(DENSITY, RECIP, TRANS_TRIP, TRANS_REC_TRIP, IN_POP, OUT_POP, OUT_ACT, EGO_X, ALT_X,
 SIM_X, SAME_X, DYAD_X, PARTNER_FRIEND, FRIEND_PARTNER, CFC, CFC_SAME, MUTUAL_LOWER) = range(17)
LINEAR, QUAD, RECIP_DEG, DENSE_TRIADS, AV_SIM, OUT_ISOLATE = range(6)

NETWORK_CODES = {
    "density": DENSITY, "recip": RECIP, "transTrip": TRANS_TRIP,
    "transRecTrip": TRANS_REC_TRIP, "inPop": IN_POP, "outPop": OUT_POP,
    "outAct": OUT_ACT, "egoX": EGO_X, "altX": ALT_X, "simX": SIM_X, "sameX": SAME_X,
    "dyadX": DYAD_X, "partnerFriend": PARTNER_FRIEND, "friendPartner": FRIEND_PARTNER,
    "coupleFourCycle": CFC, "coupleFourCycleSameGender": CFC_SAME,
    "mutualWithLower": MUTUAL_LOWER,
}
BEHAVIOR_CODES = {
    "linear": LINEAR, "quad": QUAD, "recipDeg": RECIP_DEG, "denseTriads": DENSE_TRIADS,
    "avSim": AV_SIM, "outIsolate": OUT_ISOLATE,
}

WEAK, STRONG, BEHAVIOR = 0, 1, 2


@njit(cache=True, nogil=True)
def _cov_value(row, i, z, V):
    if row < 0:
        return z[i]
    return V[row, i]


@njit(cache=True, nogil=True)
def network_change_stats(dep, i, weak, strong, z, model, V, D, out):
    """Fill ``out[e, j]`` with the change statistic of effect ``e`` for tie ``i -> j``."""
    codes, ip, fp = model[0], model[1], model[2]
    n = weak.shape[0]
    x = weak if dep == WEAK else strong
    outdeg_i = 0.0
    for h in range(n):
        outdeg_i += x[i, h]
    for e in range(codes.shape[0]):
        code = codes[e]
        for j in range(n):
            out[e, j] = 0.0
        if code == DENSITY:
            for j in range(n):
                out[e, j] = 1.0
        elif code == RECIP:
            for j in range(n):
                out[e, j] = x[j, i]
        elif code == TRANS_TRIP:
            for j in range(n):
                s = 0.0
                for h in range(n):
                    if x[i, h] != 0.0:
                        s += x[h, j] + x[j, h]
                out[e, j] = s
        elif code == TRANS_REC_TRIP:
            for j in range(n):
                two_path = 0.0
                s = 0.0
                for h in range(n):
                    if x[i, h] != 0.0:
                        two_path += x[h, j]
                        s += x[h, i] * x[j, h]
                out[e, j] = x[j, i] * two_path + s
        elif code == IN_POP:
            for j in range(n):
                d = 0.0
                for h in range(n):
                    d += x[h, j]
                out[e, j] = d - x[i, j] + 1.0
        elif code == OUT_POP:
            for j in range(n):
                d = 0.0
                for h in range(n):
                    d += x[j, h]
                out[e, j] = d
        elif code == OUT_ACT:
            for j in range(n):
                out[e, j] = 2.0 * (outdeg_i - x[i, j]) + 1.0
        elif code == EGO_X:
            v = _cov_value(ip[e, 0], i, z, V)
            c = 0.0 if math.isnan(v) else v - fp[e, 0]
            for j in range(n):
                out[e, j] = c
        elif code == ALT_X:
            for j in range(n):
                v = _cov_value(ip[e, 0], j, z, V)
                out[e, j] = 0.0 if math.isnan(v) else v - fp[e, 0]
        elif code == SIM_X:
            vi = _cov_value(ip[e, 0], i, z, V)
            for j in range(n):
                vj = _cov_value(ip[e, 0], j, z, V)
                s = 1.0 - abs(vi - vj) / fp[e, 1] - fp[e, 2]
                out[e, j] = 0.0 if math.isnan(s) else s
        elif code == SAME_X:
            vi = _cov_value(ip[e, 0], i, z, V)
            for j in range(n):
                out[e, j] = 1.0 if vi == _cov_value(ip[e, 0], j, z, V) else 0.0
        elif code == DYAD_X:
            for j in range(n):
                out[e, j] = D[ip[e, 2], i, j]
        elif code == PARTNER_FRIEND:
            p = D[ip[e, 2]]
            for h in range(n):
                if p[i, h] != 0.0:
                    for j in range(n):
                        out[e, j] += p[i, h] * x[h, j]
        elif code == FRIEND_PARTNER:
            p = D[ip[e, 2]]
            for j in range(n):
                s = 0.0
                for h in range(n):
                    if x[i, h] != 0.0:
                        s += p[h, j] + p[j, h]
                out[e, j] = s
        elif code == CFC or code == CFC_SAME:
            p = D[ip[e, 2]]
            a = np.zeros(n)
            for h in range(n):
                if p[i, h] != 0.0:
                    for k in range(n):
                        a[k] += p[i, h] * x[h, k]
            for k in range(n):
                if a[k] != 0.0:
                    for j in range(n):
                        out[e, j] += a[k] * p[k, j]
            if code == CFC_SAME:
                g = V[ip[e, 1]]
                for j in range(n):
                    if not (g[i] == g[j]):
                        out[e, j] = 0.0
        elif code == MUTUAL_LOWER:
            for j in range(n):
                out[e, j] = weak[j, i]
        out[e, i] = 0.0


@njit(cache=True, nogil=True)
def _network_ref(ref, weak, strong, D):
    if ref == 0:
        return weak
    if ref == 1:
        return strong
    return D[ref - 2]


@njit(cache=True, nogil=True)
def _dense_triads(x, i):
    n = x.shape[0]
    count = 0
    for j in range(n):
        if j == i:
            continue
        sij = x[i, j] + x[j, i]
        for h in range(j + 1, n):
            if h == i:
                continue
            if sij + x[i, h] + x[h, i] + x[j, h] + x[h, j] >= 5.0:
                count += 1
    return float(count)


@njit(cache=True, nogil=True)
def behavior_values(i, zi_values, weak, strong, z, model, D, out):
    """Fill ``out[e, c]`` with behavior statistic ``e`` of actor ``i`` if ``z_i = zi_values[c]``."""
    codes, ip, fp = model[0], model[1], model[2]
    n = weak.shape[0]
    nc = zi_values.shape[0]
    for e in range(codes.shape[0]):
        code = codes[e]
        center = fp[e, 0]
        if code == LINEAR:
            for c in range(nc):
                out[e, c] = zi_values[c] - center
            continue
        if code == QUAD:
            for c in range(nc):
                out[e, c] = (zi_values[c] - center) ** 2
            continue
        x = _network_ref(ip[e, 0], weak, strong, D)
        if code == RECIP_DEG:
            r = 0.0
            for j in range(n):
                r += x[i, j] * x[j, i]
            for c in range(nc):
                out[e, c] = (zi_values[c] - center) * r
        elif code == DENSE_TRIADS:
            t = _dense_triads(x, i)
            for c in range(nc):
                out[e, c] = (zi_values[c] - center) * t
        elif code == AV_SIM:
            deg = 0.0
            for j in range(n):
                deg += x[i, j]
            for c in range(nc):
                if deg == 0.0:
                    out[e, c] = 0.0
                    continue
                s = 0.0
                for j in range(n):
                    if x[i, j] != 0.0:
                        s += x[i, j] * (1.0 - abs(zi_values[c] - z[j]) / fp[e, 1] - fp[e, 2])
                out[e, c] = s / deg
        elif code == OUT_ISOLATE:
            deg = 0.0
            for j in range(n):
                deg += x[i, j]
            for c in range(nc):
                out[e, c] = zi_values[c] if deg == 0.0 else 0.0


@njit(cache=True, nogil=True)
def _network_candidates_into(dep, i, weak, strong, z, model, V, D, ch, alters, deltas):
    n = weak.shape[0]
    k = model[0].shape[0]
    network_change_stats(dep, i, weak, strong, z, model, V, D, ch)
    x = weak if dep == WEAK else strong
    m = 0
    for j in range(n):
        if j == i:
            continue
        if dep == WEAK:
            if x[i, j] == 1.0 and strong[i, j] == 1.0:
                continue  # a strong tie must be downgraded before the weak tie can go
        elif weak[i, j] == 0.0:
            continue  # strong ties only on top of weak ones
        sign = -1.0 if x[i, j] == 1.0 else 1.0
        for e in range(k):
            deltas[m, e] = sign * ch[e, j]
        alters[m] = j
        m += 1
    alters[m] = -1
    for e in range(k):
        deltas[m, e] = 0.0
    return m + 1


@njit(cache=True, nogil=True)
def network_candidates(dep, i, weak, strong, z, model, V, D):
    """Permitted toggles for actor ``i`` on network ``dep``.

    Returns ``(alters, deltas)``: alter ``-1`` is the no-change option (always
    last) and ``deltas[c, e]`` is the change of statistic ``e`` relative to
    the current state.
    """
    n = weak.shape[0]
    k = model[0].shape[0]
    ch = np.empty((k, n))
    alters = np.empty(n, np.int64)
    deltas = np.empty((n, k))
    m = _network_candidates_into(dep, i, weak, strong, z, model, V, D, ch, alters, deltas)
    return alters[:m].copy(), deltas[:m].copy()


@njit(cache=True, nogil=True)
def behavior_candidates(i, n_levels, weak, strong, z, model, D):
    """Permitted behavior moves for actor ``i``: ``(steps, deltas)``, no-change last."""
    k = model[0].shape[0]
    zi = z[i]
    steps = np.empty(3, np.int64)
    m = 0
    if zi > 1:
        steps[m] = -1
        m += 1
    if zi < n_levels:
        steps[m] = 1
        m += 1
    steps[m] = 0
    m += 1
    vals = np.empty(m)
    for c in range(m):
        vals[c] = zi + steps[c]
    out = np.empty((k, m))
    behavior_values(i, vals, weak, strong, z, model, D, out)
    deltas = np.empty((m, k))
    for c in range(m):
        for e in range(k):
            deltas[c, e] = out[e, c] - out[e, m - 1]
    return steps[:m].copy(), deltas


@njit(cache=True, nogil=True)
def _pick(deltas, m, theta, u, probs):
    k = theta.shape[0]
    best = -np.inf
    for c in range(m):
        f = 0.0
        for e in range(k):
            f += theta[e] * deltas[c, e]
        probs[c] = f
        if f > best:
            best = f
    total = 0.0
    for c in range(m):
        probs[c] = math.exp(probs[c] - best)
        total += probs[c]
    for c in range(m):
        probs[c] /= total
    target = u
    acc = 0.0
    for c in range(m):
        acc += probs[c]
        if target < acc:
            return c
    return m - 1


@njit(cache=True, nogil=True)
def _accumulate_scores(deltas, m, probs, chosen, scores, offset):
    k = deltas.shape[1]
    for e in range(k):
        expected = 0.0
        for c in range(m):
            expected += probs[c] * deltas[c, e]
        scores[offset + e] += deltas[chosen, e] - expected


@njit(cache=True, nogil=True)
def simulate(weak, strong, z, n_levels, rates, w_model, s_model, b_model, V, D,
             seed, horizon, scores, log):
    """Run the mini-step process for ``horizon`` time units, mutating the state in place.

    Each step consumes exactly four uniforms (waiting time, dependent,
    actor, choice), so runs with equal seeds share random numbers across
    parameter values. ``scores`` (length 0 to skip) accumulates the
    objective-function score per effect in weak/strong/behavior order.
    Returns ``(steps per dependent, events logged)``; ``log`` rows are
    ``(time, dependent, actor, alter or step, new value)``.
    """
    np.random.seed(seed)
    n = weak.shape[0]
    counts = np.zeros(3, np.int64)
    total_rate = n * (rates[0] + rates[1] + rates[2])
    if total_rate <= 0.0:
        return counts, 0
    sum_rates = rates[0] + rates[1] + rates[2]
    k_w = w_model[0].shape[0]
    k_s = s_model[0].shape[0]
    do_scores = scores.shape[0] > 0
    probs = np.empty(n + 1)
    ch_w = np.empty((k_w, n))
    ch_s = np.empty((k_s, n))
    dl_w = np.empty((n, k_w))
    dl_s = np.empty((n, k_s))
    alters = np.empty(n, np.int64)
    nlog = 0
    t = 0.0
    while True:
        u_time = np.random.random()
        u_dep = np.random.random()
        u_actor = np.random.random()
        u_choice = np.random.random()
        t += -math.log(1.0 - u_time) / total_rate
        if t >= horizon:
            break
        r = u_dep * sum_rates
        if r < rates[0]:
            dep = WEAK
        elif r < rates[0] + rates[1]:
            dep = STRONG
        else:
            dep = BEHAVIOR
        i = min(int(u_actor * n), n - 1)
        counts[dep] += 1
        if dep == BEHAVIOR:
            steps, deltas = behavior_candidates(i, n_levels, weak, strong, z, b_model, D)
            c = _pick(deltas, deltas.shape[0], b_model[3], u_choice, probs)
            if do_scores:
                _accumulate_scores(deltas, deltas.shape[0], probs, c, scores, k_w + k_s)
            if steps[c] != 0:
                z[i] += steps[c]
                if nlog < log.shape[0]:
                    log[nlog, 0] = t
                    log[nlog, 1] = dep
                    log[nlog, 2] = i
                    log[nlog, 3] = steps[c]
                    log[nlog, 4] = z[i]
                nlog += 1
        else:
            if dep == WEAK:
                model, ch, deltas = w_model, ch_w, dl_w
            else:
                model, ch, deltas = s_model, ch_s, dl_s
            m = _network_candidates_into(dep, i, weak, strong, z, model, V, D, ch, alters, deltas)
            c = _pick(deltas, m, model[3], u_choice, probs)
            if do_scores:
                _accumulate_scores(deltas, m, probs, c, scores, 0 if dep == WEAK else k_w)
            j = alters[c]
            if j >= 0:
                x = weak if dep == WEAK else strong
                x[i, j] = 1.0 - x[i, j]
                if nlog < log.shape[0]:
                    log[nlog, 0] = t
                    log[nlog, 1] = dep
                    log[nlog, 2] = i
                    log[nlog, 3] = j
                    log[nlog, 4] = x[i, j]
                nlog += 1
    return counts, nlog


@njit(cache=True, nogil=True)
def fuzz_check(weak, strong, z, n_levels, rates, w_model, s_model, b_model, V, D, seed, n_steps):
    """Run ``n_steps`` mini steps, checking nesting, grid and diagonal after each.

    Returns the number of steps after which the state was invalid.
    """
    np.random.seed(seed)
    n = weak.shape[0]
    probs = np.empty(n + 1)
    sum_rates = rates[0] + rates[1] + rates[2]
    violations = 0
    for step in range(n_steps):
        r = np.random.random() * sum_rates
        i = min(int(np.random.random() * n), n - 1)
        u = np.random.random()
        if r < rates[0] + rates[1]:
            dep = WEAK if r < rates[0] else STRONG
            model = w_model if dep == WEAK else s_model
            alters, deltas = network_candidates(dep, i, weak, strong, z, model, V, D)
            c = _pick(deltas, deltas.shape[0], model[3], u, probs)
            j = alters[c]
            if j >= 0:
                x = weak if dep == WEAK else strong
                x[i, j] = 1.0 - x[i, j]
        else:
            steps, deltas = behavior_candidates(i, n_levels, weak, strong, z, b_model, D)
            c = _pick(deltas, deltas.shape[0], b_model[3], u, probs)
            z[i] += steps[c]
        bad = False
        for a in range(n):
            if weak[a, a] != 0.0 or strong[a, a] != 0.0 or z[a] < 1 or z[a] > n_levels:
                bad = True
            for b in range(n):
                if strong[a, b] > weak[a, b]:
                    bad = True
        if bad:
            violations += 1
    return violations
