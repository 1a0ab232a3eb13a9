"""Limiting constants for survival, the running maximum and the all-time maximum.

Regimes are keyed by the mean of the motion: ``zero_mean``,
``positive_mean`` and ``negative_mean``. Constants that exist only as
limits (``C_0``, ``C_1(y)``, ``C_2(alpha)``) are reported as Monte-Carlo
estimates or intervals, never as a single invented number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .branching_law import OffspringLaw, c_sub, small_phi
from .fluctuation import (
    DEFAULT_DT,
    ZERO_MEAN_TOL,
    default_z_grid,
    q_survival,
    renewal_R,
    renewal_R_star,
    renewal_table,
    trapezoid,
)
from .levy_models import LevyModel, PreconditionError, dual, esscher, lambda_star, psi, psi_d1, psi_d2, right_inverse
from .particle_sim import SimConfig, run_spine
from .scale import ScaleFunctionEvaluator
from .stats import McEstimate

ZERO_MEAN = "zero_mean"
POSITIVE_MEAN = "positive_mean"
NEGATIVE_MEAN = "negative_mean"


class UnsupportedRegimeError(ValueError):
    pass


def regime_of(model: LevyModel) -> str:
    m = psi_d1(model, 0.0)
    if abs(m) <= ZERO_MEAN_TOL:
        return ZERO_MEAN
    return POSITIVE_MEAN if m > 0 else NEGATIVE_MEAN


@dataclass
class LimitPrediction:
    regime: str
    scaling: str
    constant: float | tuple[float, float]
    ingredients: dict = field(default_factory=dict)
    se: float = 0.0

    def __post_init__(self):
        if isinstance(self.constant, tuple):
            lo, hi = self.constant
            if not 0 < lo <= hi:
                raise ValueError(f"interval constant must satisfy 0 < lower <= upper, got {self.constant}")
        elif not self.constant > 0:
            raise ValueError(f"limit constant must be positive, got {self.constant}")

    def to_dict(self) -> dict:
        c = list(self.constant) if isinstance(self.constant, tuple) else self.constant
        return {"regime": self.regime, "scaling": self.scaling, "constant": c, "se": self.se,
                "ingredients": {k: _plain(v) for k, v in self.ingredients.items()}}


def _plain(v):
    if isinstance(v, McEstimate):
        return {"mean": v.mean, "se": v.se, "n": v.n}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def positive_mean_qx(model: LevyModel, x: float, horizon: float = 200.0, n: int = 100_000, seed: int = 0) -> float:
    """``q_x``: analytic for spectrally negative models, barrier survival at ``horizon`` otherwise."""
    if model.spectrally_negative:
        return psi_d1(model, 0.0) * float(ScaleFunctionEvaluator(model, 0.0)(x))
    return q_survival(model, x, horizon, n, seed=seed).estimate.mean


def _renewal_value(model, x, n, seed, star: bool) -> float:
    fn = renewal_R_star if star else renewal_R
    return fn(model, x, n, DEFAULT_DT, seed, exact_if_creeping=True).mean


def survival_limit(model: LevyModel, law: OffspringLaw, x: float, c0: McEstimate | float | None = None,
                   renewal_n: int = 4000, seed: int = 0, c0_kwargs: dict | None = None) -> LimitPrediction:
    """Limit of the suitably scaled ``P_x(zeta > t)``."""
    regime = regime_of(model)
    csub = c_sub(law)
    if regime == ZERO_MEAN:
        sigma2 = psi_d2(model, 0.0)
        r = _renewal_value(model, x, renewal_n, seed, star=False)
        const = 2.0 * csub * r / math.sqrt(2.0 * math.pi * sigma2)
        return LimitPrediction(regime, "sqrt(t) e^{alpha t}", const, {"C_sub": csub, "R(x)": r, "sigma2": sigma2})
    if regime == POSITIVE_MEAN:
        qx = positive_mean_qx(model, x, seed=seed)
        return LimitPrediction(regime, "e^{alpha t}", qx * csub, {"C_sub": csub, "q_x": qx})
    if model.is_lattice:
        raise PreconditionError("negative-mean limits need a non-lattice motion")
    lam = lambda_star(model)
    d2 = psi_d2(model, lam)
    rstar = _renewal_value(model, x, renewal_n, seed, star=True)
    if c0 is None:
        c0 = estimate_C0(model, law, **(c0_kwargs or {}))
    c0_mean = c0.mean if isinstance(c0, McEstimate) else float(c0)
    c0_se = c0.se if isinstance(c0, McEstimate) else 0.0
    pref = 2.0 * rstar * math.exp(lam * x) / math.sqrt(2.0 * math.pi * d2 ** 3)
    return LimitPrediction(regime, "t^{3/2} e^{(alpha - Psi(lambda_*)) t}", pref * c0_mean,
                           {"C_0": c0, "R*(x)": rstar, "lambda_*": lam, "Psi''(lambda_*)": d2,
                            "Psi(lambda_*)": psi(model, lam), "C_sub": csub}, se=pref * c0_se)


def gaussian_tail(z: float) -> float:
    """``(1/sqrt(2 pi)) int_z^inf e^{-s^2/2} ds``."""
    return 0.5 * special.erfc(z / math.sqrt(2.0))


def mt_tail_limit(model: LevyModel, law: OffspringLaw, x: float, y: float, c1: McEstimate | float | None = None,
                  renewal_n: int = 4000, seed: int = 0, c1_kwargs: dict | None = None) -> LimitPrediction:
    """Limit of the suitably scaled ``P_x(M_t > level)``.

    The level is ``sqrt(t) y`` (zero mean), ``sqrt(t) y + E xi_1 t``
    (positive mean) or ``y`` (negative mean).
    """
    regime = regime_of(model)
    if regime == ZERO_MEAN:
        if y < 0:
            raise ValueError("zero-mean tail needs y >= 0")
        base = survival_limit(model, law, x, renewal_n=renewal_n, seed=seed)
        sigma2 = base.ingredients["sigma2"]
        factor = math.exp(-y * y / (2.0 * sigma2))
        return LimitPrediction(regime, "sqrt(t) e^{alpha t}", base.constant * factor,
                               {**base.ingredients, "gaussian_factor": factor})
    if regime == POSITIVE_MEAN:
        base = survival_limit(model, law, x, seed=seed)
        sigma = math.sqrt(psi_d2(model, 0.0))
        factor = gaussian_tail(y / sigma)
        return LimitPrediction(regime, "e^{alpha t}", base.constant * factor,
                               {**base.ingredients, "sigma2": sigma * sigma, "gaussian_factor": factor})
    if y < 0:
        raise ValueError("negative-mean tail needs y >= 0")
    if c1 is None:
        c1 = estimate_C1(model, law, y, **(c1_kwargs or {}))
    pred = survival_limit(model, law, x, c0=c1, renewal_n=renewal_n, seed=seed)
    ingredients = dict(pred.ingredients)
    ingredients["C_1(y)"] = ingredients.pop("C_0")
    return LimitPrediction(regime, pred.scaling, pred.constant, ingredients, pred.se)


@dataclass
class ConstantEstimate:
    """``C_0`` / ``C_1(y)`` at a finite ``N`` with the diagnostics needed to judge it."""

    estimate: McEstimate
    N: float
    y: float
    z_grid: np.ndarray
    integrand: np.ndarray
    integrand_se: np.ndarray
    r_hat_star: np.ndarray
    lower_bound: float
    upper_bound: float
    tail_mass: float
    warnings: tuple[str, ...] = ()


def _constant_at(model: LevyModel, law: OffspringLaw, y: float | None, N: float, z_grid, n_per_z: int,
                 seed: int, dt: float, renewal_n: int, workers) -> ConstantEstimate:
    # y=None integrates P_z(zeta > N) instead of P_z(M_N > y)
    regime = regime_of(model)
    if regime != NEGATIVE_MEAN:
        raise PreconditionError("C_0 and C_1 are defined for negative-mean motions")
    if model.is_lattice:
        raise PreconditionError("C_0 and C_1 need a non-lattice motion")
    lam = lambda_star(model)
    z = default_z_grid(lam) if z_grid is None else np.asarray(z_grid, dtype=float)
    rhat, rhat_se = renewal_table(model, z, renewal_n, DEFAULT_DT, seed + 17, which="hat_star",
                                  exact_if_creeping=True)
    psi_star = psi(model, lam)
    cfg = SimConfig(model, law, dt=dt, horizon=max(N, 1.0), seed=seed)
    means = np.zeros(z.size)
    ses = np.zeros(z.size)
    for k, zk in enumerate(z):
        if zk <= 0:
            continue
        levels = () if y is None else (y,)
        sb = run_spine(cfg.with_seed(seed + 1 + 1009 * k), float(zk), N, n_per_z, ylevels=levels, tilt=lam, workers=workers)
        # e^{(alpha - Psi*) N} e^{-lam z} P_z(M_N > y) = E_spine[1{spine above y} e^{-lam xi_N} / #above]
        w = sb.survival_weights() if y is None else sb.tail_weights(0)
        vals = w * math.exp(-lam * zk - psi_star * N)
        means[k] = vals.mean()
        ses[k] = vals.std(ddof=1) / math.sqrt(vals.size)
    integrand = means * rhat
    w = np.zeros(z.size)
    dz = np.diff(z)
    w[:-1] += 0.5 * dz
    w[1:] += 0.5 * dz
    est = float(w @ integrand)
    se = float(math.sqrt(np.sum((w * rhat * ses) ** 2)))
    # bounds: C_sub * int_y^inf e^{-lam z} R-hat*(z) dz <= C_y <= int_y^inf e^{-lam z} R-hat*(z) dz
    kernel = np.exp(-lam * z) * rhat
    mask = z >= (y or 0.0)
    upper = trapezoid(kernel[mask], z[mask]) if mask.sum() > 1 else 0.0
    lower = c_sub(law) * upper
    total = trapezoid(kernel, z)
    tail = float(kernel[-1] / lam / max(total, 1e-300))
    warns = ()
    if tail > 0.01:
        warns = (f"integrand tail mass {tail:.3f} beyond z={z[-1]:.3g}; extend the z-grid",)
    return ConstantEstimate(McEstimate(est, se, n_per_z), float(N), float(y or 0.0), z, integrand, w * rhat * ses,
                            rhat, lower, upper, tail, warns)


def estimate_C1(model: LevyModel, law: OffspringLaw, y: float = 0.0, N: float = 8.0, z_grid=None,
                n_per_z: int = 4000, seed: int = 0, dt: float = 0.05, renewal_n: int = 2000,
                workers: int | None = None, details: bool = False):
    """``C_1(y)`` at finite ``N`` by spine sampling per grid point and trapezoid quadrature in ``z``."""
    res = _constant_at(model, law, y, N, z_grid, n_per_z, seed, dt, renewal_n, workers)
    return res if details else res.estimate


def estimate_C0(model: LevyModel, law: OffspringLaw, N: float = 8.0, z_grid=None, n_per_z: int = 4000,
                seed: int = 0, dt: float = 0.05, renewal_n: int = 2000, workers: int | None = None,
                details: bool = False):
    """``C_0`` from the surviving-population weights.

    ``C_1(0)`` is the same constant reached through ``P_z(M_N > 0)``; the
    two routes use different random streams so their agreement is a check.
    """
    res = _constant_at(model, law, None, N, z_grid, n_per_z, seed + 7, dt, renewal_n, workers)
    return res if details else res.estimate


def constant_stability(model: LevyModel, law: OffspringLaw, N: float, dN: float = 2.0, **kwargs):
    """Cauchy-style diagnostic: ``(C(N), C(N + dN), difference)``."""
    a = estimate_C0(model, law, N, **kwargs)
    b = estimate_C0(model, law, N + dN, **kwargs)
    return a, b, a - b


def c2_lower_bound(model: LevyModel, law: OffspringLaw, tail_tol: float = 1e-12) -> dict:
    """Lower bound ``exp{-E_0^{psi(alpha)} tau_1^+ * sum_n phi(e^{-n psi(alpha)})}`` on ``C_2(alpha)``."""
    alpha = law.alpha
    rate = right_inverse(model, alpha)
    if rate == 0:
        raise ValueError("psi(alpha) = 0: degenerate all-time maximum tail")
    # upward passage creeps and the tilted model drifts up at speed Psi'(psi(alpha))
    passage = 1.0 / psi_d1(model, rate)
    total = 0.0
    n = 0
    while True:
        term = small_phi(law, math.exp(-n * rate))
        total += term
        n += 1
        # phi(u) <= phi'(0) u, so the remainder is below phi'(0) e^{-n r} / (1 - e^{-r})
        slope = small_phi(law, 1e-8) / 1e-8 if not law.is_pure_death else 0.0
        if slope * math.exp(-n * rate) / (-math.expm1(-rate)) < tail_tol or term == 0.0 and n > 1:
            break
        if n > 100_000:
            break
    return {"psi(alpha)": rate, "E tau_1^+ (tilted)": passage, "phi_sum": total,
            "lower": math.exp(-passage * total)}


def alltime_limit(model: LevyModel, law: OffspringLaw, x: float) -> LimitPrediction:
    """Decay rate ``psi(alpha)`` and the interval ``[C2_low, 1] * W^(alpha)(x) Psi'(psi(alpha))``."""
    if not model.spectrally_negative:
        raise PreconditionError("all-time maximum asymptotics need a spectrally negative model")
    bound = c2_lower_bound(model, law)
    rate = bound["psi(alpha)"]
    w = float(ScaleFunctionEvaluator(model, law.alpha)(x))
    base = w * psi_d1(model, rate)
    return LimitPrediction("spectrally_negative", "e^{-psi(alpha) y}", (bound["lower"] * base, base),
                           {"psi(alpha)": rate, "W^(alpha)(x)": w, "Psi'(psi(alpha))": psi_d1(model, rate),
                            "C2_low": bound["lower"], "E tau_1^+ (tilted)": bound["E tau_1^+ (tilted)"],
                            "phi_sum": bound["phi_sum"]})


def tilted_ascent_time(model: LevyModel, a: float, n: int = 10_000, dt: float = 1e-3, seed: int = 0) -> McEstimate:
    """Simulated ``E_0^{psi(a)} tau_1^+`` (started at 0 in the tilted model)."""
    from .paths import EXIT_UPPER
    from .fluctuation import simulate_passages
    tilted = esscher(model, right_inverse(model, a))
    t, _, code = simulate_passages(tilted, 0.0, -math.inf, 1.0, n, dt, seed)
    return McEstimate.from_samples(t, capped_fraction=float(np.mean(code != EXIT_UPPER)))


def yaglom_limit_cdf(regime: str, sigma: float, point):
    """Limit CDF of the normalised maximum given survival."""
    p = np.asarray(point, dtype=float)
    if regime == ZERO_MEAN:
        out = np.where(p > 0, -np.expm1(-np.maximum(p, 0.0) ** 2 / (2.0 * sigma * sigma)), 0.0)
    elif regime == POSITIVE_MEAN:
        out = 0.5 * special.erfc(-p / (sigma * math.sqrt(2.0)))
    else:
        raise UnsupportedRegimeError("the negative-mean limit law has no closed form")
    return float(out) if out.ndim == 0 else out
