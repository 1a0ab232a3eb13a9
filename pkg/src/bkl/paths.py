"""Compiled single-path steppers for Brownian motion plus compound Poisson jumps.

Jump times are exact (exponential clocks). Between jumps the Gaussian part
moves in sub-steps of at most ``dtmax``; a barrier crossing inside a
sub-step is detected with the Brownian-bridge probability
``exp(-2 (y1 - b) (y2 - b) / (var * h))``. Killing is therefore exact in law
for any ``dtmax``; the step size only affects passage times and maxima.

Models enter the kernels as ``(drift, var, jumps)`` where ``jumps`` is an
``(n, 5)`` array of rows ``(rate, kind, a, b, p)`` (see ``pack_model``).
"""

import math

import numpy as np
from numba import njit

from .rng import exponential, normal, replica_key, uniform

ALIVE = -1.0
EXIT_LOWER = 0
EXIT_UPPER = 1
EXIT_CAPPED = 2


def pack_model(model):
    """``(drift, var, jumps, total_rate)`` for the kernels."""
    drift, var, rate, kind, a, b, p = model.arrays()
    jumps = np.zeros((max(len(rate), 1), 5))
    if len(rate):
        jumps[:, 0] = rate
        jumps[:, 1] = kind
        jumps[:, 2] = a
        jumps[:, 3] = b
        jumps[:, 4] = p
    else:
        jumps = np.zeros((0, 5))
    return drift, var, jumps, float(rate.sum())


@njit(cache=True)
def draw_jump(st, jumps, jtot):
    u = uniform(st) * jtot
    i = 0
    acc = jumps[0, 0]
    n = jumps.shape[0]
    while i < n - 1 and u > acc:
        i += 1
        acc += jumps[i, 0]
    kind = int(jumps[i, 1])
    if kind == 0:
        return -exponential(st, jumps[i, 2])
    if kind == 1:
        return exponential(st, jumps[i, 2])
    if uniform(st) < jumps[i, 4]:
        return jumps[i, 2]
    return jumps[i, 3]


@njit(cache=True)
def bridge_max(a, b, var, h, u):
    """Inverse-CDF draw of the maximum of a Brownian bridge from a to b."""
    d = b - a
    return 0.5 * (a + b + math.sqrt(d * d - 2.0 * var * h * math.log(u)))


@njit(cache=True)
def advance(pos, h, drift, var, jumps, jtot, dtmax, st, track_max, cur_max):
    """Move one particle for time ``h`` with killing below 0.

    Returns ``(pos, kill_elapsed, cur_max)``; ``kill_elapsed`` is ``ALIVE``
    when the particle survives the whole interval.
    """
    t = 0.0
    next_jump = t + exponential(st, jtot) if jtot > 0.0 else math.inf
    while t < h:
        seg_end = min(h, t + dtmax, next_jump)
        dt = seg_end - t
        if dt > 0.0:
            y2 = pos + drift * dt + math.sqrt(var * dt) * normal(st)
            u = uniform(st)
            if y2 < 0.0:
                return y2, t + dt * pos / (pos - y2), cur_max
            if var > 0.0 and u < math.exp(-2.0 * pos * y2 / (var * dt)):
                return 0.0, t + 0.5 * dt, cur_max
            if track_max:
                m = bridge_max(pos, y2, var, dt, uniform(st)) if var > 0.0 else max(pos, y2)
                if m > cur_max:
                    cur_max = m
            pos = y2
        t = seg_end
        if next_jump <= seg_end and next_jump <= h:
            pos += draw_jump(st, jumps, jtot)
            if pos < 0.0:
                return pos, t, cur_max
            if pos > cur_max:
                cur_max = pos
            next_jump = t + exponential(st, jtot)
    return pos, ALIVE, cur_max


@njit(cache=True)
def first_passage(x, lower, upper, drift, var, jumps, jtot, dtmax, tcap, st):
    """First exit from ``(lower, upper)``: ``(time, position, code)``.

    A crossing by the Gaussian part places the particle exactly on the
    barrier (continuous paths creep); a crossing by a jump keeps the
    overshoot. ``code`` is one of ``EXIT_LOWER``, ``EXIT_UPPER``, ``EXIT_CAPPED``.
    """
    t = 0.0
    pos = x
    next_jump = exponential(st, jtot) if jtot > 0.0 else math.inf
    while t < tcap:
        seg_end = min(tcap, t + dtmax, next_jump)
        dt = seg_end - t
        if dt > 0.0:
            y2 = pos + drift * dt + math.sqrt(var * dt) * normal(st)
            u_lo = uniform(st)
            u_up = uniform(st)
            if y2 < lower:
                return t + dt * (pos - lower) / (pos - y2), lower, EXIT_LOWER
            if y2 >= upper:
                return t + dt * (upper - pos) / (y2 - pos), upper, EXIT_UPPER
            if var > 0.0:
                if u_lo < math.exp(-2.0 * (pos - lower) * (y2 - lower) / (var * dt)):
                    return t + 0.5 * dt, lower, EXIT_LOWER
                if upper < math.inf and u_up < math.exp(-2.0 * (upper - pos) * (upper - y2) / (var * dt)):
                    return t + 0.5 * dt, upper, EXIT_UPPER
            pos = y2
        t = seg_end
        if next_jump <= seg_end and next_jump < tcap:
            pos += draw_jump(st, jumps, jtot)
            if pos < lower:
                return t, pos, EXIT_LOWER
            if pos >= upper:
                return t, pos, EXIT_UPPER
            next_jump = t + exponential(st, jtot)
    return tcap, pos, EXIT_CAPPED


@njit(cache=True)
def batch_first_passage(x, lower, upper, drift, var, jumps, jtot, dtmax, tcap, seed, start, n):
    times = np.empty(n)
    positions = np.empty(n)
    codes = np.empty(n, dtype=np.int64)
    st = np.empty(1, dtype=np.uint64)
    for i in range(n):
        st[0] = replica_key(seed, start + i)
        times[i], positions[i], codes[i] = first_passage(x, lower, upper, drift, var, jumps, jtot, dtmax, tcap, st)
    return times, positions, codes


@njit(cache=True)
def batch_path_grid(x, grid, drift, var, jumps, jtot, dtmax, seed, start, n):
    """Positions of killed paths on an ascending time grid; NaN once killed."""
    out = np.full((n, grid.shape[0]), np.nan)
    st = np.empty(1, dtype=np.uint64)
    for i in range(n):
        st[0] = replica_key(seed, start + i)
        pos = x
        t = 0.0
        for k in range(grid.shape[0]):
            h = grid[k] - t
            if h > 0.0:
                pos, killed, _ = advance(pos, h, drift, var, jumps, jtot, dtmax, st, False, 0.0)
                if killed != ALIVE:
                    break
                t = grid[k]
            out[i, k] = pos
    return out
