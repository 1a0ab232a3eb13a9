"""Offspring laws of a subcritical branching mechanism.

Holds the finite-support offspring distribution together with the branching
rate and derives the quantities the limit theorems are built from: the mean
``m``, the decay rate ``alpha = beta * (1 - m)``, the branching functionals
``Phi(u) = beta * (f(1 - u) - (1 - u))`` and ``phi(u) = Phi(u) / u - alpha``,
the Galton-Watson survival probability ``g(t)`` and the constant ``C_sub``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate

DEFAULT_STEP = 1e-3


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class ConfigurationError(ValueError):
    """Invalid numerical configuration (step sizes, tolerances, ...)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to reach its tolerance."""


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring probabilities ``p_0..p_K`` and branching rate ``beta``.

    Only subcritical laws (``0 <= m < 1``) are accepted. ``m = 0`` (pure
    death) is allowed since it makes every functional trivially solvable.
    """

    probabilities: tuple[float, ...]
    branch_rate: float = 1.0

    def __init__(self, probabilities: Sequence[float], branch_rate: float = 1.0):
        p = tuple(float(v) for v in probabilities)
        if not p:
            raise ValueError("offspring law needs at least p_0")
        if any(v < 0 or not math.isfinite(v) for v in p):
            raise ValueError(f"offspring probabilities must be finite and >= 0, got {p}")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError(f"offspring probabilities sum to {math.fsum(p)!r}, not 1")
        if not branch_rate > 0 or not math.isfinite(branch_rate):
            raise ValueError(f"branch rate must be positive, got {branch_rate}")
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "branch_rate", float(branch_rate))
        m = self.mean
        if not m < 1.0:
            raise ValueError(f"offspring mean m={m} is not subcritical (need m < 1)")

    @classmethod
    def from_config(cls, cfg: dict) -> "OffspringLaw":
        unknown = set(cfg) - {"p", "beta"}
        if unknown:
            raise ValueError(f"unknown offspring-law keys: {sorted(unknown)}")
        return cls(cfg["p"], cfg.get("beta", 1.0))

    def to_config(self) -> dict:
        return {"p": list(self.probabilities), "beta": self.branch_rate}

    @property
    def beta(self) -> float:
        return self.branch_rate

    @property
    def mean(self) -> float:
        return math.fsum(k * pk for k, pk in enumerate(self.probabilities))

    @property
    def alpha(self) -> float:
        return self.branch_rate * (1.0 - self.mean)

    @property
    def is_pure_death(self) -> bool:
        return self.mean == 0.0

    def generating_function(self, s: float) -> float:
        """``f(s) = sum_k p_k s^k`` by Horner's rule."""
        acc = 0.0
        for pk in reversed(self.probabilities):
            acc = acc * s + pk
        return acc

    def size_biased(self) -> np.ndarray:
        """Size-biased law ``k p_k / m``; undefined for pure death."""
        if self.is_pure_death:
            raise DomainError("size-biased law does not exist for m = 0")
        p = np.asarray(self.probabilities)
        return np.arange(len(p)) * p / self.mean

    def polynomial_coefficients(self) -> np.ndarray:
        """Coefficients ``c_j`` with ``Phi(u) = sum_j c_j u^j`` (exact expansion)."""
        p = np.polynomial.Polynomial(self.probabilities)
        one_minus_u = np.polynomial.Polynomial([1.0, -1.0])
        poly = self.branch_rate * (p(one_minus_u) - one_minus_u)
        coef = np.zeros(max(len(self.probabilities), 2))
        coef[: len(poly.coef)] = poly.coef
        coef[0] = 0.0
        return coef


def mean_offspring(law: OffspringLaw) -> float:
    return law.mean


def _check_unit(u: float) -> None:
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"u={u} outside [0, 1]")


def big_phi(law: OffspringLaw, u: float) -> float:
    """``Phi(u) = beta (f(1-u) - (1-u))``, nonnegative on [0, 1]."""
    _check_unit(u)
    if u == 0.0:
        return 0.0
    # Phi(u) = (alpha + phi(u)) u keeps the identity exact to rounding
    return (law.alpha + _phi_unchecked(law, u)) * u


def _phi_unchecked(law: OffspringLaw, u: float) -> float:
    # phi(u) = beta * sum_{k>=2} p_k (((1-u)^k - 1 + k u) / u), summed stably
    # with (1 - (1-u)^k)/u = sum_{j<k} (1-u)^j.
    if u == 0.0:
        return 0.0
    s = 1.0 - u
    total = 0.0
    for k, pk in enumerate(law.probabilities):
        if k < 2 or pk == 0.0:
            continue
        geom = 0.0
        power = 1.0
        for _ in range(k):
            geom += power
            power *= s
        # ((1-u)^k - 1)/u + k = k - geom
        total += pk * (k - geom)
    return law.branch_rate * total


def small_phi(law: OffspringLaw, u: float) -> float:
    """``phi(u) = Phi(u)/u - alpha`` with ``phi(0) = 0``; non-decreasing."""
    _check_unit(u)
    return _phi_unchecked(law, u)


def small_phi_array(law: OffspringLaw, u) -> np.ndarray:
    """Vectorised ``phi`` on an array of points in [0, 1]."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise DomainError("phi arguments must lie in [0, 1]")
    s = 1.0 - u
    total = np.zeros_like(u)
    for k, pk in enumerate(law.probabilities):
        if k < 2 or pk == 0.0:
            continue
        geom = np.zeros_like(u)
        power = np.ones_like(u)
        for _ in range(k):
            geom += power
            power = power * s
        total += pk * (k - geom)
    return law.branch_rate * total


def llogl_value(law: OffspringLaw) -> float:
    """``sum_{k>=2} k log(k) p_k`` (always finite for finite support)."""
    return math.fsum(k * math.log(k) * pk for k, pk in enumerate(law.probabilities) if k >= 2)


def _rk4(law: OffspringLaw, g0: float, t_end: float, step: float, stop_phi: float | None = None):
    """Integrate ``(g, I)`` with ``g' = -Phi(g)``, ``I' = phi(g)`` from ``(g0, 0)``.

    Stops at ``t_end`` or, if ``stop_phi`` is given, as soon as
    ``phi(g) < stop_phi``. Returns ``(t, g, I)``.
    """
    if not step > 0:
        raise ConfigurationError(f"ODE step must be positive, got {step}")
    alpha = law.alpha

    def rhs(g):
        ph = _phi_unchecked(law, min(max(g, 0.0), 1.0))
        return -(alpha + ph) * g, ph

    t, g, integral = 0.0, g0, 0.0
    while t < t_end:
        if stop_phi is not None and _phi_unchecked(law, g) < stop_phi:
            break
        h = min(step, t_end - t)
        k1g, k1i = rhs(g)
        k2g, k2i = rhs(g + 0.5 * h * k1g)
        k3g, k3i = rhs(g + 0.5 * h * k2g)
        k4g, k4i = rhs(g + h * k3g)
        g += h * (k1g + 2 * k2g + 2 * k3g + k4g) / 6.0
        integral += h * (k1i + 2 * k2i + 2 * k3i + k4i) / 6.0
        t += h
        if t_end - t < 1e-12 * max(1.0, t_end):
            t = t_end
    return t, g, integral


@lru_cache(maxsize=256)
def survival_g(law: OffspringLaw, t: float, step: float = DEFAULT_STEP) -> float:
    """Galton-Watson survival probability ``g(t) = P(extinction time > t)``.

    Classical fixed-step RK4 on ``g' = -Phi(g)``, ``g(0) = 1``.
    """
    if not step > 0:
        raise ConfigurationError(f"ODE step must be positive, got {step}")
    if t < 0:
        raise DomainError(f"t={t} must be nonnegative")
    if t == 0:
        return 1.0
    if law.is_pure_death:
        return math.exp(-law.alpha * t)
    return _rk4(law, 1.0, float(t), step)[1]


def survival_g_grid(law: OffspringLaw, times: Sequence[float], step: float = DEFAULT_STEP) -> np.ndarray:
    """``g`` on an ascending grid in one integration pass (the ODE is autonomous)."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("times must be nonnegative and ascending")
    out = np.empty_like(times)
    t_prev, g = 0.0, 1.0
    for i, t in enumerate(times):
        if law.is_pure_death:
            g = math.exp(-law.alpha * t)
        elif t > t_prev:
            g = _rk4(law, g, t - t_prev, step)[1]
        out[i] = g
        t_prev = t
    return out


@dataclass(frozen=True)
class CSubResult:
    value: float
    horizon: float
    g_at_horizon: float
    body_integral: float
    tail_integral: float


@lru_cache(maxsize=64)
def c_sub_details(law: OffspringLaw, tol: float = 1e-10, step: float = DEFAULT_STEP) -> CSubResult:
    """``C_sub = exp(-int_0^inf phi(g(s)) ds)`` with its truncation diagnostics.

    The body integral rides along the RK4 integration of ``g`` until
    ``phi(g(T)) < tol * alpha``. Past ``T``, ``g`` decays like
    ``g(T) exp(-alpha (s - T))`` and the tail is
    ``int_0^{g(T)} phi(v) / (alpha v) dv``.
    """
    if not tol > 0:
        raise ConfigurationError(f"tolerance must be positive, got {tol}")
    if law.is_pure_death:
        return CSubResult(1.0, 0.0, 1.0, 0.0, 0.0)
    alpha = law.alpha
    t_max = 50.0 / alpha + 50.0 * math.log(1.0 / tol) / alpha
    horizon, g_t, body = _rk4(law, 1.0, t_max, step, stop_phi=tol * alpha)
    if _phi_unchecked(law, g_t) >= tol * alpha:
        raise NumericalError(
            f"C_sub truncation did not converge: phi(g({horizon:.3g}))="
            f"{_phi_unchecked(law, g_t):.3g} >= tol*alpha={tol * alpha:.3g}"
        )
    tail, err = integrate.quad(lambda v: _phi_unchecked(law, v) / (alpha * v) if v > 0 else 0.0,
                               0.0, g_t, epsabs=tol * 1e-3, limit=200)
    if err > tol:
        raise NumericalError(f"C_sub tail quadrature error {err:.3g} exceeds tol {tol:.3g}")
    return CSubResult(math.exp(-(body + tail)), horizon, g_t, body, tail)


def c_sub(law: OffspringLaw, tol: float = 1e-10) -> float:
    """Limit ``lim e^{alpha t} g(t)``; lies in (0, 1]."""
    return c_sub_details(law, tol).value
