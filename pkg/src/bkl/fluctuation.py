"""Fluctuation identities and single-particle Monte Carlo.

Analytic side: scale functions (re-exported from ``scale``) and the two-sided
exit ratio. Simulation side: first passage with the bridge-corrected
stepper, renewal functions ``R``, ``R*`` and ``R-hat*``, survival of the
barrier, and checks of the conditioned limit laws.

Random streams are addressed by an integer ``seed``; replica ``i`` of a
batch always uses stream ``(seed, i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .branching_law import DomainError
from .levy_models import LevyModel, PreconditionError, dual, esscher, lambda_star, psi, psi_d1, psi_d2
from .paths import EXIT_CAPPED, EXIT_LOWER, EXIT_UPPER, batch_first_passage, batch_path_grid, pack_model
from .rng import seed_to_uint
from .scale import ScaleFunctionEvaluator, scale_w, scale_w_bm  # noqa: F401  (public re-exports)
from .stats import McEstimate, ks_statistic

ZERO_MEAN_TOL = 1e-9
DEFAULT_DT = 1e-3
COARSE_DT = 0.5


class InsufficientSampleError(RuntimeError):
    """No replicate produced the conditioning event."""


@dataclass(frozen=True)
class FirstPassageRecord:
    passage_time: float
    position_at_passage: float
    crossed_upper: bool
    capped: bool = False


def _u(seed: int) -> np.uint64:
    return seed_to_uint(int(seed))


def simulate_passages(model: LevyModel, x: float, lower: float, upper: float | None, n: int,
                      dt: float = DEFAULT_DT, seed: int = 0, time_cap: float = 1e4, start: int = 0):
    """Arrays ``(times, positions, codes)`` for ``n`` independent exits from ``(lower, upper)``."""
    up = math.inf if upper is None else float(upper)
    if not lower < x:
        raise DomainError(f"need lower < x, got lower={lower}, x={x}")
    if not x < up:
        raise DomainError(f"need x < upper, got x={x}, upper={up}")
    if not dt > 0:
        raise DomainError(f"dt={dt} must be positive")
    d, v, j, jt = pack_model(model)
    return batch_first_passage(float(x), float(lower), up, d, v, j, jt, float(dt), float(time_cap),
                               _u(seed), int(start), int(n))


def first_passage(model: LevyModel, x: float, lower: float, upper: float | None = None,
                  dt: float = DEFAULT_DT, seed: int = 0, time_cap: float = 1e4, index: int = 0) -> FirstPassageRecord:
    """One exit from ``(lower, upper)`` using stream ``(seed, index)``."""
    t, p, c = simulate_passages(model, x, lower, upper, 1, dt, seed, time_cap, start=index)
    return FirstPassageRecord(float(t[0]), float(p[0]), bool(c[0] == EXIT_UPPER), bool(c[0] == EXIT_CAPPED))


def killed_positions(model: LevyModel, x: float, times: Sequence[float], n: int,
                     dt: float = DEFAULT_DT, seed: int = 0, start: int = 0) -> np.ndarray:
    """``(n, len(times))`` positions of paths killed below 0; NaN after killing."""
    grid = np.asarray(times, dtype=float)
    if np.any(np.diff(grid) < 0) or (grid.size and grid[0] < 0):
        raise ValueError("times must be nonnegative and ascending")
    if not x > 0:
        raise DomainError(f"x={x} must be positive")
    d, v, j, jt = pack_model(model)
    return batch_path_grid(float(x), grid, d, v, j, jt, float(dt), _u(seed), int(start), int(n))


def exit_up_prob(model: LevyModel, q: float, x: float, y: float, nodes: int = 48) -> float:
    """``E_x[e^{-q tau_y^+}; tau_y^+ < tau_0^-] = W^(q)(x) / W^(q)(y)``."""
    if not 0 < x <= y:
        raise DomainError(f"need 0 < x <= y, got x={x}, y={y}")
    if q < 0:
        raise DomainError(f"q={q} must be nonnegative")
    if x == y:
        return 1.0
    ev = ScaleFunctionEvaluator(model, q, nodes=nodes)
    # ratio via the tilted representation stays finite for large y
    c = ev.exponent
    return math.exp(c * (x - y)) * (ev(x) * math.exp(-c * x)) / (ev(y) * math.exp(-c * y))


def mc_exit_up(model: LevyModel, q: float, x: float, y: float, n: int, dt: float = DEFAULT_DT,
               seed: int = 0, time_cap: float = 1e4) -> McEstimate:
    """Simulated ``E_x[e^{-q tau_y^+}; tau_y^+ < tau_0^-]``."""
    t, _, c = simulate_passages(model, x, 0.0, y, n, dt, seed, time_cap)
    vals = np.where(c == EXIT_UPPER, np.exp(-q * t), 0.0)
    return McEstimate.from_samples(vals, capped_fraction=float(np.mean(c == EXIT_CAPPED)))


def _require_zero_mean(model: LevyModel) -> None:
    mean = psi_d1(model, 0.0)
    if abs(mean) > ZERO_MEAN_TOL:
        raise PreconditionError(
            f"renewal function needs a zero-mean model (E xi_1 = {mean:.3g}); tilt by lambda_* first")


def _has_negative_jumps(model: LevyModel) -> bool:
    for j in model.jumps:
        if j.kind == "neg_exp":
            return True
        if j.kind == "two_point" and any(v < 0 and w > 0 for v, w in zip(j.values, (j.prob, 1 - j.prob))):
            return True
    return False


def renewal_R(model: LevyModel, x: float, n: int, dt: float = DEFAULT_DT, seed: int = 0,
              fine_horizon: float = 100.0, exact_if_creeping: bool = False) -> McEstimate:
    """``R(x) = x - E_x xi_{tau_0^-}`` for a zero-mean model.

    Paths run with step ``dt`` up to ``fine_horizon`` and then, if still
    alive, continue with coarse steps. Only the undershoot enters ``R`` and
    the undershoot is exact in law for any step (Gaussian crossings creep
    onto the barrier, jumps are exact), so the switch introduces no bias.
    With ``exact_if_creeping`` a model without negative jumps returns
    ``x`` (zero undershoot) without simulating.
    """
    _require_zero_mean(model)
    if not x > 0:
        raise DomainError(f"x={x} must be positive")
    if exact_if_creeping and not _has_negative_jumps(model):
        return McEstimate(float(x), 0.0, max(int(n), 1))
    _, pos, code = simulate_passages(model, x, 0.0, None, n, dt, seed, fine_horizon)
    pending = np.flatnonzero(code == EXIT_CAPPED)
    for i in pending:
        _, p2, c2 = simulate_passages(model, float(pos[i]), 0.0, None, 1, max(dt, COARSE_DT),
                                      seed + 1, 1e7, start=int(i))
        pos[i] = p2[0]
        code[i] = c2[0]
    undershoot = np.where(code == EXIT_LOWER, pos, 0.0)
    return McEstimate.from_samples(x - undershoot, capped_fraction=float(np.mean(code == EXIT_CAPPED)))


def renewal_R_star(model: LevyModel, x: float, n: int, dt: float = DEFAULT_DT, seed: int = 0,
                   **kwargs) -> McEstimate:
    """``R*`` : renewal function of the ``lambda_*``-tilted model."""
    return renewal_R(esscher(model, lambda_star(model)), x, n, dt, seed, **kwargs)


def renewal_R_hat_star(model: LevyModel, x: float, n: int, dt: float = DEFAULT_DT, seed: int = 0,
                       **kwargs) -> McEstimate:
    """``R-hat*`` : renewal function of the dual of the ``lambda_*``-tilted model."""
    return renewal_R(dual(esscher(model, lambda_star(model))), x, n, dt, seed, **kwargs)


def renewal_table(model: LevyModel, z_grid: Sequence[float], n: int, dt: float = DEFAULT_DT, seed: int = 0,
                  which: str = "hat_star", **kwargs) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate ``R`` / ``R*`` / ``R-hat*`` on a grid; returns ``(values, se)``; ``R(0) = 0``."""
    fn = {"plain": renewal_R, "star": renewal_R_star, "hat_star": renewal_R_hat_star}[which]
    vals, ses = [], []
    for k, z in enumerate(z_grid):
        if z <= 0:
            vals.append(0.0)
            ses.append(0.0)
            continue
        est = fn(model, float(z), n, dt, seed + 7919 * k, **kwargs)
        vals.append(est.mean)
        ses.append(est.se)
    return np.array(vals), np.array(ses)


def renewal_martingale(model: LevyModel, renewal: Callable, x: float, s: float, n: int,
                       dt: float = DEFAULT_DT, seed: int = 0) -> McEstimate:
    """``E_x[R(xi_s); tau_0^- > s]`` for a zero-mean ``model``; equals ``R(x)``."""
    _require_zero_mean(model)
    pos = killed_positions(model, x, [s], n, dt, seed)[:, 0]
    vals = np.where(np.isnan(pos), 0.0, renewal(np.nan_to_num(pos)))
    return McEstimate.from_samples(vals)


@dataclass(frozen=True)
class SurvivalReport:
    estimate: McEstimate
    horizon: float
    analytic: float | None
    note: str = "P_x(tau_0^- > horizon) decreases to q_x as the horizon grows"


def q_survival(model: LevyModel, x: float, horizon: float, n: int, dt: float = 1.0, seed: int = 0) -> SurvivalReport:
    """Barrier survival up to ``horizon`` as a proxy for ``q_x = P_x(tau_0^- = inf)``.

    For spectrally negative models also reports ``Psi'(0+) W(x)``, the
    classical closed form of ``q_x``, as a cross-check.
    """
    mean = psi_d1(model, 0.0)
    if not mean > 0:
        raise PreconditionError(f"q_x > 0 needs a positive mean, got {mean}")
    if not x > 0:
        raise DomainError(f"x={x} must be positive")
    pos = killed_positions(model, x, [horizon], n, dt, seed)[:, 0]
    est = McEstimate.from_samples(~np.isnan(pos))
    analytic = None
    if model.spectrally_negative:
        analytic = mean * float(ScaleFunctionEvaluator(model, 0.0)(x))
    return SurvivalReport(est, float(horizon), analytic)


def rayleigh_cdf(z, scale: float = 1.0):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, -np.expm1(-np.maximum(z, 0.0) ** 2 / (2.0 * scale * scale)), 0.0)


@dataclass
class RayleighReport:
    a_grid: np.ndarray
    estimates: list
    limits: np.ndarray
    ks: float
    n_survivors: int
    renewal_value: float


def conditioned_rayleigh_check(model: LevyModel, x: float, t: float, n: int, dt: float = 1.0, seed: int = 0,
                               a_grid: Sequence[float] = (0.5, 1.0, 1.5, 2.0, 3.0),
                               renewal_value: float | None = None) -> RayleighReport:
    """``sqrt(t) P_x(xi_t <= a sqrt(t), tau_0^- > t)`` against its zero-mean limit.

    The limit is ``2 R(x) / sqrt(2 pi sigma^2) * (1 - exp(-a^2 / (2 sigma^2)))``;
    also returns the KS distance of ``xi_t / (sigma sqrt(t))`` given survival
    to the standard Rayleigh law.
    """
    _require_zero_mean(model)
    sigma2 = psi_d2(model, 0.0)
    sigma = math.sqrt(sigma2)
    if renewal_value is None:
        renewal_value = renewal_R(model, x, 4000, DEFAULT_DT, seed + 1, exact_if_creeping=True).mean
    pos = killed_positions(model, x, [t], n, dt, seed)[:, 0]
    alive = ~np.isnan(pos)
    if not alive.any():
        raise InsufficientSampleError("no path survived; increase n or decrease t")
    a = np.asarray(a_grid, dtype=float)
    ests = [McEstimate.from_samples(math.sqrt(t) * (alive & (np.nan_to_num(pos) <= ai * math.sqrt(t)))) for ai in a]
    limits = 2.0 * renewal_value / math.sqrt(2.0 * math.pi * sigma2) * rayleigh_cdf(a, sigma)
    ks = ks_statistic(pos[alive] / (sigma * math.sqrt(t)), rayleigh_cdf)
    return RayleighReport(a, ests, limits, ks, int(alive.sum()), float(renewal_value))


@dataclass
class NegDriftReport:
    estimate: McEstimate
    prediction: float
    ratio: float
    lambda_star: float
    z_grid: np.ndarray
    r_hat_star: np.ndarray
    r_star_x: float


def default_z_grid(lam: float, points: int = 80) -> np.ndarray:
    """``0`` plus a geometric grid up to ``12 / lambda_*``."""
    zmax = 12.0 / lam
    return np.concatenate([[0.0], np.geomspace(zmax * 1e-4, zmax, points - 1)])


def trapezoid(y, x) -> float:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def negdrift_prediction(model: LevyModel, x: float, y: float, r_star_x: float, z_grid, r_hat_star) -> float:
    """Right side of the negative-drift conditioned limit for ``f = 1_{(y, inf)}``."""
    lam = lambda_star(model)
    z = np.asarray(z_grid, dtype=float)
    integrand = np.where(z > y, np.exp(-lam * z) * np.asarray(r_hat_star), 0.0)
    if y > 0:
        # start the quadrature exactly at y
        zy = np.concatenate([[y], z[z > y]])
        ry = np.interp(y, z, r_hat_star)
        integrand = np.concatenate([[math.exp(-lam * y) * ry], integrand[z > y]])
        z = zy
    integral = trapezoid(integrand, z)
    return 2.0 * r_star_x * math.exp(lam * x) / math.sqrt(2.0 * math.pi * psi_d2(model, lam) ** 3) * integral


def conditioned_negdrift_check(model: LevyModel, x: float, t: float, y: float, n: int, dt: float = 1.0,
                               seed: int = 0, z_grid: Sequence[float] | None = None,
                               renewal_n: int = 4000, exact_if_creeping: bool = True) -> NegDriftReport:
    """Importance-sampled ``t^{3/2} e^{-Psi(lambda_*) t} P_x(xi_t > y, tau_0^- > t)``.

    Paths follow the ``lambda_*``-tilted (zero-mean) model; a survivor ending
    at ``z`` carries weight ``exp(Psi(lambda_*) t + lambda_* x - lambda_* z)``.
    """
    lam = lambda_star(model)
    tilted = esscher(model, lam)
    pos = killed_positions(tilted, x, [t], n, dt, seed)[:, 0]
    ok = ~np.isnan(pos)
    if not ok.any():
        raise InsufficientSampleError("no tilted path survived; increase n or decrease t")
    psi_star = psi(model, lam)
    z = np.nan_to_num(pos)
    w = np.where(ok & (z > y), np.exp(psi_star * t + lam * x - lam * z), 0.0)
    est = McEstimate.from_samples(t ** 1.5 * math.exp(-psi_star * t) * w)
    grid = default_z_grid(lam) if z_grid is None else np.asarray(z_grid, dtype=float)
    rhat, _ = renewal_table(model, grid, renewal_n, DEFAULT_DT, seed + 11, which="hat_star",
                            exact_if_creeping=exact_if_creeping)
    rstar = renewal_R_star(model, x, renewal_n, DEFAULT_DT, seed + 13, exact_if_creeping=exact_if_creeping).mean
    pred = negdrift_prediction(model, x, y, rstar, grid, rhat)
    return NegDriftReport(est, pred, est.mean / pred, lam, grid, rhat, rstar)


@dataclass
class DualityReport:
    left: McEstimate
    right: McEstimate
    difference: McEstimate


def _interval_integral(model, t, outer, inner, n, dt, seed, points):
    """``int_outer E_x[1_inner(xi_t); tau > t] dx`` by MC per node plus trapezoid."""
    a, b = outer
    xs = np.linspace(a, b, points)
    means, vars_ = [], []
    for k, xv in enumerate(xs):
        if xv <= 0:
            means.append(0.0)
            vars_.append(0.0)
            continue
        if t == 0:
            means.append(float(inner[0] <= xv <= inner[1]))
            vars_.append(0.0)
            continue
        pos = killed_positions(model, xv, [t], n, dt, seed + 104729 * k)[:, 0]
        hit = (~np.isnan(pos)) & (np.nan_to_num(pos, nan=-1.0) >= inner[0]) & (np.nan_to_num(pos, nan=-1.0) <= inner[1])
        means.append(hit.mean())
        vars_.append(hit.var(ddof=1) / n)
    w = np.full(points, (b - a) / (points - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    mean = float(w @ np.array(means))
    se = float(math.sqrt(w ** 2 @ np.array(vars_)))
    return McEstimate(mean, se, n)


def duality_check(model: LevyModel, t: float, n: int, h_interval=(0.5, 1.5), g_interval=(1.0, 2.0),
                  dt: float = 1.0, seed: int = 0, points: int = 41) -> DualityReport:
    """Both sides of ``int h(x) E_x[g(xi_t); tau > t] dx = int g(y) E_y[h(-xi_t); tau-hat > t] dy``.

    ``h`` and ``g`` are indicators of the given intervals.
    """
    left = _interval_integral(model, t, h_interval, g_interval, n, dt, seed, points)
    right = _interval_integral(dual(model), t, g_interval, h_interval, n, dt, seed + 1, points)
    return DualityReport(left, right, left - right)


def tilted_exit_check(model: LevyModel, a: float, x: float, y: float, n: int, dt: float = DEFAULT_DT,
                      seed: int = 0) -> tuple[McEstimate, McEstimate]:
    """Two routes to ``E_x[e^{-a tau_y^+}; tau_y^+ < tau_0^-]``.

    Direct simulation, and ``e^{psi(a)(x - y)}`` times the exit probability
    of the ``psi(a)``-tilted model (upward passage creeps, so the change of
    measure has a deterministic density on the exit event).
    """
    from .levy_models import right_inverse
    c = right_inverse(model, a)
    direct = mc_exit_up(model, a, x, y, n, dt, seed)
    _, _, code = simulate_passages(esscher(model, c), x, 0.0, y, n, dt, seed + 1)
    tilted = McEstimate.from_samples((code == EXIT_UPPER).astype(float)).scaled(math.exp(c * (x - y)))
    return direct, tilted


def positive_drift_joint(model: LevyModel, x: float, t: float, y: float, n: int, dt: float = 1.0,
                         seed: int = 0) -> McEstimate:
    """``P_x(tau_0^- > t, xi_t - E xi_1 t > sqrt(t) y)``."""
    mean = psi_d1(model, 0.0)
    pos = killed_positions(model, x, [t], n, dt, seed)[:, 0]
    ok = ~np.isnan(pos) & (np.nan_to_num(pos) - mean * t > math.sqrt(t) * y)
    return McEstimate.from_samples(ok)
