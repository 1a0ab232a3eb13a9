"""Compiled kernels for branching trees of killed Lévy particles.

``tree_core`` simulates one tree depth-first. Each particle owns the random
stream ``child_key(parent_key, i)``, so a particle's path depends only on
its genealogy; trees started from different positions with the same key
are coupled particle by particle.

``spine_core`` simulates the tree seen from a distinguished line of
descent (size-biased spine). The spine branches at rate ``beta * m`` with
offspring law ``k p_k / m``; its ``k - 1`` siblings start ordinary trees.
For any functional ``F``,

    E[sum over particles alive at t of F] = e^{-alpha t} E_spine[F(spine)],

which turns rare survival events into weighted averages that are
bounded by one.
"""

import math

import numpy as np
from numba import njit

from .paths import ALIVE, advance
from .rng import child_key, discrete, exponential, replica_key

_SIBLING_SALT = np.uint64(0x5851F42D4C957F2D)


@njit(cache=True)
def tree_core(x, t0, key, horizon, checkpoints, ylevels, pcdf, beta,
              drift, var, jumps, jtot, dtmax, track_max, max_live, max_events,
              spos, stb, skey, st, alive, rmax, above):
    """Simulate one tree whose root is born at time ``t0`` at ``x``.

    Adds into ``alive[k]``, ``rmax[k]`` and ``above[k, l]`` (particles alive
    at ``checkpoints[k]``, their maximal position, and how many sit strictly
    above ``ylevels[l]``). Returns ``(last_terminal_time, alltime_max,
    capped, reached_horizon, events)``.
    """
    nc = checkpoints.shape[0]
    nl = ylevels.shape[0]
    spos[0] = x
    stb[0] = t0
    skey[0] = key
    top = 1
    events = 0
    last = t0
    amax = x
    capped = False
    reached = False
    while top > 0:
        top -= 1
        pos = spos[top]
        tb = stb[top]
        k = skey[top]
        st[0] = k
        td = tb + exponential(st, beta)
        end = min(td, horizon)
        cur = tb
        killed_at = ALIVE
        ci = np.searchsorted(checkpoints, tb)
        while ci < nc and checkpoints[ci] <= end and checkpoints[ci] < td:
            h = checkpoints[ci] - cur
            if h > 0.0:
                pos, ke, amax = advance(pos, h, drift, var, jumps, jtot, dtmax, st, track_max, amax)
                if ke != ALIVE:
                    killed_at = cur + ke
                    break
                cur = checkpoints[ci]
            alive[ci] += 1
            if pos > rmax[ci]:
                rmax[ci] = pos
            for li in range(nl):
                if pos > ylevels[li]:
                    above[ci, li] += 1
            ci += 1
        if killed_at == ALIVE and end > cur:
            pos, ke, amax = advance(pos, end - cur, drift, var, jumps, jtot, dtmax, st, track_max, amax)
            if ke != ALIVE:
                killed_at = cur + ke
        if killed_at != ALIVE:
            if killed_at > last:
                last = killed_at
            continue
        if td > horizon:
            reached = True
            continue
        events += 1
        if events > max_events:
            capped = True
            break
        nk = discrete(st, pcdf)
        if nk == 0:
            if td > last:
                last = td
            continue
        if top + nk > max_live:
            capped = True
            break
        for i in range(nk):
            spos[top] = pos
            stb[top] = td
            skey[top] = child_key(k, i)
            top += 1
    return last, amax, capped, reached, events


@njit(cache=True)
def batch_trees(x, seed, start, n, horizon, checkpoints, ylevels, pcdf, beta,
                drift, var, jumps, jtot, dtmax, track_max, max_live, max_events):
    nc = checkpoints.shape[0]
    nl = ylevels.shape[0]
    zeta = np.empty(n)
    amax = np.empty(n)
    capped = np.zeros(n, dtype=np.bool_)
    reached = np.zeros(n, dtype=np.bool_)
    alive = np.zeros((n, nc), dtype=np.int64)
    rmax = np.full((n, nc), -np.inf)
    above = np.zeros((n, nc, nl), dtype=np.int64)
    spos = np.empty(max_live)
    stb = np.empty(max_live)
    skey = np.empty(max_live, dtype=np.uint64)
    st = np.empty(1, dtype=np.uint64)
    for i in range(n):
        key = replica_key(seed, start + i)
        zeta[i], amax[i], capped[i], reached[i], _ = tree_core(
            x, 0.0, key, horizon, checkpoints, ylevels, pcdf, beta, drift, var, jumps, jtot,
            dtmax, track_max, max_live, max_events, spos, stb, skey, st, alive[i], rmax[i], above[i])
    return zeta, amax, capped, reached, alive, rmax, above


@njit(cache=True)
def spine_core(x, key, t, ylevels, sbcdf, pcdf, beta, m,
               sdrift, svar, sjumps, sjtot, drift, var, jumps, jtot, dtmax,
               max_live, max_events, spos, stb, skey, st, st_spine,
               alive1, rmax1, above1):
    """One spine sample up to time ``t``.

    The spine moves with ``(sdrift, svar, sjumps)`` (possibly tilted),
    siblings with the untilted motion. Returns ``(spine_alive, spine_pos,
    capped)``; ``alive1``, ``rmax1``, ``above1`` receive the population at
    ``t`` excluding the spine.
    """
    nl = ylevels.shape[0]
    alive1[0] = 0
    rmax1[0] = -np.inf
    for li in range(nl):
        above1[0, li] = 0
    tgrid = np.empty(1)
    tgrid[0] = t
    st_spine[0] = key
    sib_base = key ^ _SIBLING_SALT
    n_sib = 0
    s = 0.0
    pos = x
    rate = beta * m
    while True:
        seg = min(s + exponential(st_spine, rate), t) if rate > 0.0 else t
        pos, ke, _ = advance(pos, seg - s, sdrift, svar, sjumps, sjtot, dtmax, st_spine, False, 0.0)
        if ke != ALIVE:
            return False, pos, False
        s = seg
        if s >= t:
            break
        k = discrete(st_spine, sbcdf)
        for _j in range(k - 1):
            _, _, capped, _, _ = tree_core(
                pos, s, child_key(sib_base, n_sib), t, tgrid, ylevels, pcdf, beta, drift, var, jumps,
                jtot, dtmax, False, max_live, max_events, spos, stb, skey, st, alive1, rmax1, above1)
            n_sib += 1
            if capped:
                return True, pos, True
    return True, pos, False


@njit(cache=True)
def batch_spine(x, seed, start, n, t, ylevels, sbcdf, pcdf, beta, m,
                sdrift, svar, sjumps, sjtot, drift, var, jumps, jtot, dtmax, max_live, max_events):
    """Returns ``(spine_alive, spine_pos, others_alive, others_max, others_above, capped)``."""
    nl = ylevels.shape[0]
    s_alive = np.zeros(n, dtype=np.bool_)
    s_pos = np.empty(n)
    o_alive = np.zeros(n, dtype=np.int64)
    o_max = np.full(n, -np.inf)
    o_above = np.zeros((n, nl), dtype=np.int64)
    capped = np.zeros(n, dtype=np.bool_)
    spos = np.empty(max_live)
    stb = np.empty(max_live)
    skey = np.empty(max_live, dtype=np.uint64)
    st = np.empty(1, dtype=np.uint64)
    st_spine = np.empty(1, dtype=np.uint64)
    alive1 = np.zeros(1, dtype=np.int64)
    rmax1 = np.full(1, -np.inf)
    above1 = np.zeros((1, nl), dtype=np.int64)
    for i in range(n):
        key = replica_key(seed, start + i)
        ok, p, cap = spine_core(x, key, t, ylevels, sbcdf, pcdf, beta, m, sdrift, svar, sjumps, sjtot,
                                drift, var, jumps, jtot, dtmax, max_live, max_events, spos, stb, skey,
                                st, st_spine, alive1, rmax1, above1)
        s_alive[i] = ok
        s_pos[i] = p
        capped[i] = cap
        if ok:
            o_alive[i] = alive1[0]
            o_max[i] = rmax1[0]
            for li in range(nl):
                o_above[i, li] = above1[0, li]
    return s_alive, s_pos, o_alive, o_max, o_above, capped
