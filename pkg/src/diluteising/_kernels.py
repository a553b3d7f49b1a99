"""Compiled inner loops for the graphical construction.

Noise lives on unit time cells: the events of vertex ``v`` in ``[c, c+1)``
are a Poisson(1) count with uniform times and marks, all drawn from
counters keyed by ``(seed, v, c)``. Any window of time therefore sees the
same events no matter how a run is split.
"""

import math

import numpy as np
from numba import njit

from . import rng

CELL_OFFSET = 1 << 40
MAX_EVENTS = 24
HEAT_BATH = 0
METROPOLIS = 1


@njit(cache=True, inline="always")
def _poisson1(u):
    p = math.exp(-1.0)
    c = p
    k = 0
    while u >= c and k < MAX_EVENTS - 1:
        k += 1
        p /= k
        c += p
    return k


@njit(cache=True)
def vertex_events(seed, vid, cell, times, marks):
    """Sorted events of one vertex inside the unit cell ``[cell, cell+1)``."""
    c = cell + CELL_OFFSET
    k = _poisson1(rng.uniform5(seed, rng.TAG_GLAUBER, vid, c, 0))
    for i in range(k):
        times[i] = cell + rng.uniform5(seed, rng.TAG_GLAUBER, vid, c, 1 + 2 * i)
        marks[i] = rng.uniform5(seed, rng.TAG_GLAUBER, vid, c, 2 + 2 * i)
    for i in range(1, k):
        t = times[i]
        m = marks[i]
        j = i - 1
        while j >= 0 and times[j] > t:
            times[j + 1] = times[j]
            marks[j + 1] = marks[j]
            j -= 1
        times[j + 1] = t
        marks[j + 1] = m
    return k


@njit(cache=True)
def vertex_ids(coords, seed_free_salt):
    """Stable ids from absolute coordinates (independent of the region)."""
    out = np.empty(coords.shape[0], dtype=np.int64)
    for i in range(coords.shape[0]):
        z = np.uint64(seed_free_salt)
        for k in range(coords.shape[1]):
            z = rng.absorb(z, coords[i, k] + CELL_OFFSET)
        out[i] = np.int64(z >> np.uint64(1))
    return out


@njit(cache=True)
def collect_events(seed, sites, vid, t_a, t_b, cell, buf_t, buf_m, buf_x):
    """Events of the active sites in ``[max(t_a, cell), min(t_b, cell+1))``."""
    lo = max(t_a, float(cell))
    hi = min(t_b, float(cell + 1))
    ts = np.empty(MAX_EVENTS)
    ms = np.empty(MAX_EVENTS)
    ne = 0
    for i in range(sites.shape[0]):
        s = sites[i]
        k = vertex_events(seed, vid[s], cell, ts, ms)
        for j in range(k):
            if ts[j] >= lo and ts[j] < hi:
                if ne >= buf_t.shape[0]:
                    return -1
                buf_t[ne] = ts[j]
                buf_m[ne] = ms[j]
                buf_x[ne] = s
                ne += 1
    return ne


@njit(cache=True, inline="always")
def local_field(spins, r, x, nbr, jtab):
    f = 0.0
    for k in range(nbr.shape[1]):
        y = nbr[x, k]
        if y >= 0:
            f += jtab[r, x, k] * spins[r, y]
    return f


@njit(cache=True)
def advance(spins, sites, nbr, jtab, beta, h, vid, seed, t_a, t_b, rule,
            pw, pc, psum, hit, pairs, stats, stop_all):
    """Run all replicas over ``[t_a, t_b)`` with shared noise.

    ``stats`` is ``[events, order violations]``. A replica's hitting time is
    the first event time at which ``psum >= pc``. Returns the time reached
    (``t_b`` unless every replica hit and ``stop_all`` is set).
    """
    R = spins.shape[0]
    cap = max(64, 4 * sites.shape[0])
    buf_t = np.empty(cap)
    buf_m = np.empty(cap)
    buf_x = np.empty(cap, dtype=np.int64)
    c0 = int(math.floor(t_a))
    c1 = int(math.ceil(t_b))
    for cell in range(c0, c1):
        ne = collect_events(seed, sites, vid, t_a, t_b, cell, buf_t, buf_m, buf_x)
        while ne < 0:
            cap *= 2
            buf_t = np.empty(cap)
            buf_m = np.empty(cap)
            buf_x = np.empty(cap, dtype=np.int64)
            ne = collect_events(seed, sites, vid, t_a, t_b, cell, buf_t, buf_m, buf_x)
        order = np.argsort(buf_t[:ne])
        for oi in range(ne):
            e = order[oi]
            x = buf_x[e]
            u = buf_m[e]
            t = buf_t[e]
            for r in range(R):
                f = local_field(spins, r, x, nbr, jtab)
                old = spins[r, x]
                if rule == HEAT_BATH:
                    q = 1.0 / (1.0 + math.exp(-beta[r] * (f + h[r])))
                    new = 1 if u > 1.0 - q else -1
                else:
                    dH = old * (f + h[r])
                    new = old
                    if dH <= 0.0 or u < math.exp(-beta[r] * dH):
                        new = -old
                if new != old:
                    spins[r, x] = new
                    if pw[x] != 0.0:
                        psum[r] += pw[x] * (new - old)
                if math.isnan(hit[r]) and psum[r] >= pc[r]:
                    hit[r] = t
            for p in range(pairs.shape[0]):
                if spins[pairs[p, 0], x] > spins[pairs[p, 1], x]:
                    stats[1] += 1
            stats[0] += 1
            if stop_all:
                done = True
                for r in range(R):
                    if math.isnan(hit[r]):
                        done = False
                        break
                if done:
                    return t
    return t_b


@njit(cache=True)
def cftp_once(seed, sites, nbr, jtab, beta, h, vid, ext, max_T, out):
    """Monotone CFTP from windows ``[-T, 0]``, doubling T; returns T or -T on timeout."""
    n_amb = ext.shape[0]
    spins = np.empty((2, n_amb), dtype=np.int8)
    jt = np.empty((2, jtab.shape[0], jtab.shape[1]))
    jt[0] = jtab
    jt[1] = jtab
    b = np.array([beta, beta])
    hh = np.array([h, h])
    pw = np.zeros(n_amb)
    pc = np.array([np.inf, np.inf])
    psum = np.zeros(2)
    hit = np.array([np.nan, np.nan])
    pairs = np.zeros((0, 2), dtype=np.int64)
    stats = np.zeros(2, dtype=np.int64)
    T = 1.0
    while True:
        for x in range(n_amb):
            spins[0, x] = ext[x]
            spins[1, x] = ext[x]
        for i in range(sites.shape[0]):
            spins[0, sites[i]] = 1
            spins[1, sites[i]] = -1
        advance(spins, sites, nbr, jt, b, hh, vid, seed, -T, 0.0, HEAT_BATH,
                pw, pc, psum, hit, pairs, stats, False)
        same = True
        for i in range(sites.shape[0]):
            if spins[0, sites[i]] != spins[1, sites[i]]:
                same = False
                break
        if same:
            for x in range(n_amb):
                out[x] = spins[0, x]
            return T
        if T >= max_T:
            diff = 0
            for i in range(sites.shape[0]):
                if spins[0, sites[i]] != spins[1, sites[i]]:
                    diff += 1
            out[0] = diff
            return -T
        T *= 2.0


@njit(cache=True)
def cftp_histogram(base_seed, count, sites, nbr, jtab, beta, h, vid, ext, max_T, hist):
    """Histogram of ``count`` independent CFTP samples (site bits as in all_configs)."""
    out = np.empty(ext.shape[0], dtype=np.int8)
    max_used = 0.0
    for i in range(count):
        seed = np.int64(rng.key2(base_seed, i) >> np.uint64(1))
        T = cftp_once(seed, sites, nbr, jtab, beta, h, vid, ext, max_T, out)
        if T < 0:
            return i, -T
        if T > max_used:
            max_used = T
        idx = 0
        for k in range(sites.shape[0]):
            if out[sites[k]] > 0:
                idx |= 1 << k
        hist[idx] += 1
    return count, max_used


@njit(cache=True)
def observe_series(spins, sites, nbr, jtab, beta, h, vid, seed, t0, dt, steps, obs_w):
    """Advance one replica in steps of ``dt`` and record ``sum obs_w * spins`` after each."""
    out = np.empty(steps + 1)
    pw = np.zeros(spins.shape[1])
    pc = np.array([np.inf])
    psum = np.zeros(1)
    hit = np.array([np.nan])
    pairs = np.zeros((0, 2), dtype=np.int64)
    stats = np.zeros(2, dtype=np.int64)
    acc = 0.0
    for x in range(spins.shape[1]):
        acc += obs_w[x] * spins[0, x]
    out[0] = acc
    t = t0
    for k in range(steps):
        advance(spins, sites, nbr, jtab, beta, h, vid, seed, t, t + dt, HEAT_BATH,
                pw, pc, psum, hit, pairs, stats, False)
        t += dt
        acc = 0.0
        for x in range(spins.shape[1]):
            acc += obs_w[x] * spins[0, x]
        out[k + 1] = acc
    return out
