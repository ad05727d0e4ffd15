"""Compiled inner loops: thinning simulation, leadership sweep, occupation times."""

import math

import numpy as np
from numba import njit

INTERNAL = 0
EXTERNAL = 1


@njit(cache=True)
def intensity(x, l0, l1, phi):
    if l1 == 0.0:
        return l0
    if phi == 0.0:
        return l0 + l1
    return l0 + l1 * x**phi


@njit(cache=True)
def advance(state, horizon, gamma, theta, eps, beta, l0, l1, phi, mu, previous_mode,
            E, U, V, W, cursor, times, kinds, x_before, jumps):
    """Run the thinning sampler until the horizon or until a buffer runs dry.

    ``state`` holds (t, x, z) with x the current state at time t and z the
    state right after the last jump.  ``cursor`` holds read positions in
    (E/U, V, W) and the write position in the output arrays; both are
    updated in place.  Returns True once the horizon has been reached.

    Proposals come from a homogeneous majorant lambda(x) + mu evaluated at
    the current state, valid because the intensity only decreases between
    jumps.  One uniform per proposal decides acceptance and event type.
    """
    t, x, z = state[0], state[1], state[2]
    ie, iv, iw, k = cursor[0], cursor[1], cursor[2], cursor[3]
    ne, nv, nw, cap = E.shape[0], V.shape[0], W.shape[0], times.shape[0]
    done = False
    while True:
        if ie >= ne or iv >= nv or iw >= nw or k >= cap:
            break
        bound = intensity(x, l0, l1, phi) + mu
        if bound <= 0.0:
            done = True
            x *= math.exp(-gamma * (horizon - t))
            t = horizon
            break
        dt = E[ie] / bound
        u = U[ie] * bound
        ie += 1
        if t + dt > horizon:
            x *= math.exp(-gamma * (horizon - t))
            t = horizon
            done = True
            break
        t += dt
        x *= math.exp(-gamma * dt)
        lam = intensity(x, l0, l1, phi)
        total = lam + mu
        if total > bound * (1.0 + 1e-12):
            raise RuntimeError("thinning majorant exceeded")
        if u >= total:
            continue
        if previous_mode:
            lz = intensity(z, l0, l1, phi)
            internal = u * (lz + mu) < lz * total
        else:
            internal = u < lam
        if internal:
            jump = (eps + beta * x**theta) * V[iv]
            iv += 1
            kinds[k] = INTERNAL
        else:
            jump = W[iw]
            iw += 1
            kinds[k] = EXTERNAL
        times[k] = t
        x_before[k] = x
        jumps[k] = jump
        k += 1
        x += jump
        z = x
    state[0], state[1], state[2] = t, x, z
    cursor[0], cursor[1], cursor[2], cursor[3] = ie, iv, iw, k
    return done


@njit(cache=True)
def inter_jump_batch(z, gamma, l0, l1, phi, mu, E, U, out):
    """Fill ``out`` with inter-jump times starting from post-jump state z.

    Returns the number of (E, U) pairs consumed, or -1 if they ran out.
    """
    ie = 0
    n = E.shape[0]
    for i in range(out.shape[0]):
        t = 0.0
        x = z
        while True:
            if ie >= n:
                return -1
            bound = intensity(x, l0, l1, phi) + mu
            dt = E[ie] / bound
            u = U[ie] * bound
            ie += 1
            t += dt
            x *= math.exp(-gamma * dt)
            if u < intensity(x, l0, l1, phi) + mu:
                break
        out[i] = t
    return ie


@njit(cache=True)
def leadership(times, ids, levels, start_levels, t0, t1):
    """Time in first place and number of stays per influencer over [t0, t1].

    ``levels`` are log X(T+) + gamma*T, which stay constant between events,
    so the ranking is piecewise constant and changes only at event times.
    Ties go to the lowest index.
    """
    n_inf = start_levels.shape[0]
    a = start_levels.copy()
    lead = np.zeros(n_inf)
    stays = np.zeros(n_inf, dtype=np.int64)
    leader = np.argmax(a)
    inside = False
    tprev = t0
    for k in range(times.shape[0]):
        tk = times[k]
        if tk >= t1:
            break
        if tk > t0:
            if not inside:
                inside = True
                stays[leader] += 1
            lead[leader] += tk - tprev
            tprev = tk
        a[ids[k]] = levels[k]
        new = np.argmax(a)
        if new != leader:
            leader = new
            if inside:
                stays[leader] += 1
    if not inside:
        stays[leader] += 1
    lead[leader] += t1 - tprev
    return lead, stays


@njit(cache=True)
def occupation(times, x_after, x0, gamma, t0, t1, log_edges, occ):
    """Accumulate exact time spent in each bin over [t0, t1].

    ``occ`` has len(log_edges) + 1 slots: underflow, the bins, overflow.
    Time for a decaying segment to pass from level a to level b < a is
    ln(a / b) / gamma, so bin times are differences of log levels.
    """
    nb = log_edges.shape[0] - 1
    n = times.shape[0]
    ts = 0.0
    xs = x0
    for k in range(n + 1):
        te = times[k] if k < n else t1
        ta = max(ts, t0)
        tb = min(te, t1)
        if tb > ta:
            if xs <= 0.0:
                occ[0] += tb - ta
            else:
                hi = math.log(xs) - gamma * (ta - ts)
                lo = hi - gamma * (tb - ta)
                # overflow, bins, underflow in turn
                if hi > log_edges[nb]:
                    occ[nb + 1] += (hi - max(lo, log_edges[nb])) / gamma
                top_bin = min(np.searchsorted(log_edges, hi) - 1, nb - 1)
                for j in range(top_bin, -1, -1):
                    top = min(hi, log_edges[j + 1])
                    bot = max(lo, log_edges[j])
                    if top > bot:
                        occ[j + 1] += (top - bot) / gamma
                    if log_edges[j] <= lo:
                        break
                if lo < log_edges[0]:
                    occ[0] += (min(hi, log_edges[0]) - lo) / gamma
        if k == n or te >= t1:
            break
        ts = te
        xs = x_after[k]
    return occ


@njit(cache=True)
def popularity_before(times, likes, gamma):
    """X(t_k-) = sum_{j<k} likes_j exp(-gamma (t_k - t_j)), zero initial condition."""
    n = times.shape[0]
    out = np.empty(n)
    x = 0.0
    for k in range(n):
        if k > 0:
            x = (x + likes[k - 1]) * math.exp(-gamma * (times[k] - times[k - 1]))
        out[k] = x
    return out


@njit(cache=True)
def model_likes(times, gamma, theta, eps, beta, vhat):
    """Likes of posts at ``times`` when each post adds (eps + beta X^theta) vhat."""
    n = times.shape[0]
    out = np.empty(n)
    x = 0.0
    t = times[0] if n else 0.0
    for k in range(n):
        x *= math.exp(-gamma * (times[k] - t))
        t = times[k]
        out[k] = (eps + beta * x**theta) * vhat[k]
        x += out[k]
    return out
