"""Finite-activity Lévy models: Laplace exponent, tilting, duality, sampling.

A model is Brownian motion with drift plus finitely many compound Poisson
components. The Laplace exponent is taken as

    Psi(lam) = drift * lam + var * lam**2 / 2 + sum_j rate_j * (E exp(lam J_j) - 1)

so ``drift`` is the drift of the continuous part and the mean of the process
is ``drift + sum_j rate_j E J_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import optimize

from .branching_law import DomainError

NEG_EXP = "neg_exp"
POS_EXP = "pos_exp"
TWO_POINT = "two_point"
_KIND_CODES = {NEG_EXP: 0, POS_EXP: 1, TWO_POINT: 2}


class PreconditionError(ValueError):
    """Model does not satisfy the hypotheses an operation needs."""


@dataclass(frozen=True)
class JumpComponent:
    """Compound Poisson component with ``rate`` and a jump-size law.

    ``neg_exp``: ``J = -Exp(mu)``; ``pos_exp``: ``J = +Exp(mu)``;
    ``two_point``: ``J = values[0]`` w.p. ``prob`` else ``values[1]``.
    """

    rate: float
    kind: str
    mu: float = 0.0
    values: tuple[float, float] = (0.0, 0.0)
    prob: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"jump rate must be positive, got {self.rate}")
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown jump kind {self.kind!r}")
        if self.kind in (NEG_EXP, POS_EXP) and not self.mu > 0:
            raise ValueError(f"exponential jump parameter must be positive, got {self.mu}")
        if self.kind == TWO_POINT:
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            if not 0.0 <= self.prob <= 1.0:
                raise ValueError(f"two-point masses must lie in [0,1], got {self.prob}")

    @classmethod
    def from_config(cls, cfg: dict) -> "JumpComponent":
        kind = cfg.get("kind")
        allowed = {"rate", "kind", "mu"} if kind in (NEG_EXP, POS_EXP) else {"rate", "kind", "values", "prob"}
        unknown = set(cfg) - allowed
        if unknown:
            raise ValueError(f"unknown keys for {kind} jump: {sorted(unknown)}")
        if kind == TWO_POINT:
            return cls(cfg["rate"], kind, values=tuple(cfg["values"]), prob=cfg.get("prob", 0.5))
        return cls(cfg["rate"], kind, mu=cfg["mu"])

    def to_config(self) -> dict:
        if self.kind == TWO_POINT:
            return {"rate": self.rate, "kind": self.kind, "values": list(self.values), "prob": self.prob}
        return {"rate": self.rate, "kind": self.kind, "mu": self.mu}

    @property
    def negative_support(self) -> bool:
        if self.kind == NEG_EXP:
            return True
        if self.kind == POS_EXP:
            return False
        return all(v < 0 for v, w in zip(self.values, (self.prob, 1 - self.prob)) if w > 0)

    def strip(self) -> tuple[float, float]:
        if self.kind == NEG_EXP:
            return -self.mu, math.inf
        if self.kind == POS_EXP:
            return -math.inf, self.mu
        return -math.inf, math.inf

    def mgf(self, lam):
        """``E exp(lam J)``; accepts complex ``lam``."""
        if self.kind == NEG_EXP:
            return self.mu / (self.mu + lam)
        if self.kind == POS_EXP:
            return self.mu / (self.mu - lam)
        a, b = self.values
        return self.prob * np.exp(lam * a) + (1 - self.prob) * np.exp(lam * b)

    def mgf_d1(self, lam: float) -> float:
        if self.kind == NEG_EXP:
            return -self.mu / (self.mu + lam) ** 2
        if self.kind == POS_EXP:
            return self.mu / (self.mu - lam) ** 2
        a, b = self.values
        return self.prob * a * math.exp(lam * a) + (1 - self.prob) * b * math.exp(lam * b)

    def mgf_d2(self, lam: float) -> float:
        if self.kind == NEG_EXP:
            return 2 * self.mu / (self.mu + lam) ** 3
        if self.kind == POS_EXP:
            return 2 * self.mu / (self.mu - lam) ** 3
        a, b = self.values
        return self.prob * a * a * math.exp(lam * a) + (1 - self.prob) * b * b * math.exp(lam * b)

    def tilted(self, c: float) -> "JumpComponent":
        """Component under the exponential tilt ``e^{cx} Pi(dx)``."""
        scale = float(self.mgf(c))
        if self.kind == NEG_EXP:
            return JumpComponent(self.rate * scale, NEG_EXP, mu=self.mu + c)
        if self.kind == POS_EXP:
            return JumpComponent(self.rate * scale, POS_EXP, mu=self.mu - c)
        a, b = self.values
        wa = self.prob * math.exp(c * a)
        return JumpComponent(self.rate * scale, TWO_POINT, values=(a, b), prob=wa / scale)

    def reflected(self) -> "JumpComponent":
        if self.kind == NEG_EXP:
            return JumpComponent(self.rate, POS_EXP, mu=self.mu)
        if self.kind == POS_EXP:
            return JumpComponent(self.rate, NEG_EXP, mu=self.mu)
        a, b = self.values
        return JumpComponent(self.rate, TWO_POINT, values=(-a, -b), prob=self.prob)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == NEG_EXP:
            return -rng.exponential(1.0 / self.mu, size)
        if self.kind == POS_EXP:
            return rng.exponential(1.0 / self.mu, size)
        a, b = self.values
        return np.where(rng.random(size) < self.prob, a, b)


@dataclass(frozen=True)
class LevyModel:
    """Brownian motion with drift plus compound Poisson jumps."""

    drift: float = 0.0
    gaussian_var: float = 1.0
    jumps: tuple[JumpComponent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.gaussian_var >= 0:
            raise ValueError(f"gaussian variance must be >= 0, got {self.gaussian_var}")
        object.__setattr__(self, "jumps", tuple(self.jumps))

    @classmethod
    def brownian(cls, drift: float = 0.0, var: float = 1.0) -> "LevyModel":
        return cls(float(drift), float(var), ())

    @classmethod
    def from_config(cls, cfg: dict) -> "LevyModel":
        unknown = set(cfg) - {"drift", "gaussian_var", "jumps"}
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        jumps = tuple(JumpComponent.from_config(j) for j in cfg.get("jumps", []))
        return cls(float(cfg.get("drift", 0.0)), float(cfg.get("gaussian_var", 1.0)), jumps)

    def to_config(self) -> dict:
        return {"drift": self.drift, "gaussian_var": self.gaussian_var,
                "jumps": [j.to_config() for j in self.jumps]}

    @property
    def spectrally_negative(self) -> bool:
        return all(j.negative_support for j in self.jumps)

    @property
    def is_brownian(self) -> bool:
        return not self.jumps

    @property
    def strip(self) -> tuple[float, float]:
        """Open interval ``(Lambda_1, Lambda_2)`` on which Psi is finite."""
        lo, hi = -math.inf, math.inf
        for j in self.jumps:
            a, b = j.strip()
            lo, hi = max(lo, a), min(hi, b)
        return lo, hi

    @property
    def jump_rate(self) -> float:
        return math.fsum(j.rate for j in self.jumps)

    @property
    def mean(self) -> float:
        return psi_d1(self, 0.0)

    @property
    def variance(self) -> float:
        return psi_d2(self, 0.0)

    @property
    def is_lattice(self) -> bool:
        """Non-lattice gate: only pure-jump two-point models can be lattice.

        A model without Gaussian part whose jumps all live on a common
        lattice ``h Z`` (checked for rational ratios up to denominator 1000)
        and whose drift is zero is flagged lattice. Exponential jumps or a
        Gaussian part always make the law of ``xi_1`` non-lattice; a nonzero
        drift shifts the lattice but keeps it (``xi_1 in hZ + drift``).
        """
        if self.gaussian_var > 0:
            return False
        if any(j.kind != TWO_POINT for j in self.jumps):
            return False
        atoms = [v for j in self.jumps for v, w in zip(j.values, (j.prob, 1 - j.prob)) if w > 0 and v != 0]
        if not atoms:
            return True
        from fractions import Fraction
        base = atoms[0]
        return all(Fraction(v / base).limit_denominator(1000) == Fraction(v / base).limit_denominator(10**9)
                   for v in atoms[1:])

    def _check_strip(self, lam: float) -> None:
        lo, hi = self.strip
        if not lo < lam < hi:
            raise DomainError(f"lambda={lam} outside the Laplace strip ({lo}, {hi})")

    def arrays(self):
        """Flat parameter arrays for compiled kernels."""
        n = len(self.jumps)
        rate = np.zeros(n)
        kind = np.zeros(n, dtype=np.int64)
        a = np.zeros(n)
        b = np.zeros(n)
        p = np.zeros(n)
        for i, j in enumerate(self.jumps):
            rate[i] = j.rate
            kind[i] = _KIND_CODES[j.kind]
            if j.kind == TWO_POINT:
                a[i], b[i] = j.values
                p[i] = j.prob
            else:
                a[i] = j.mu
        return float(self.drift), float(self.gaussian_var), rate, kind, a, b, p


def psi(model: LevyModel, lam: float) -> float:
    """Laplace exponent ``log E_0 exp(lam xi_1)``."""
    model._check_strip(lam)
    return model.drift * lam + 0.5 * model.gaussian_var * lam * lam + math.fsum(
        j.rate * (float(j.mgf(lam)) - 1.0) for j in model.jumps
    )


def psi_complex(model: LevyModel, z):
    """Analytic continuation of Psi, vectorized over complex ``z``."""
    z = np.asarray(z, dtype=complex)
    out = model.drift * z + 0.5 * model.gaussian_var * z * z
    for j in model.jumps:
        out = out + j.rate * (j.mgf(z) - 1.0)
    return out


def psi_d1(model: LevyModel, lam: float) -> float:
    model._check_strip(lam)
    return model.drift + model.gaussian_var * lam + math.fsum(j.rate * j.mgf_d1(lam) for j in model.jumps)


def psi_d2(model: LevyModel, lam: float) -> float:
    model._check_strip(lam)
    return model.gaussian_var + math.fsum(j.rate * j.mgf_d2(lam) for j in model.jumps)


def _upper_bracket(model: LevyModel, start: float, f) -> float:
    """Double a step from ``start`` until ``f`` becomes positive (inside the strip)."""
    hi_strip = model.strip[1]
    step = 1.0
    hi = start + step
    while True:
        if hi >= hi_strip:
            hi = 0.5 * (start + hi_strip) if math.isfinite(hi_strip) else hi
            if f(hi) > 0:
                return hi
            # march toward the strip edge
            for _ in range(200):
                hi = 0.5 * (hi + hi_strip)
                if f(hi) > 0:
                    return hi
            raise PreconditionError("no sign change inside the Laplace strip")
        if f(hi) > 0:
            return hi
        step *= 2.0
        hi = start + step
        if step > 1e12:
            raise PreconditionError("bracket expansion did not find a sign change")


def _safe_newton(f, df, lo: float, hi: float, tol: float = 1e-12, maxiter: int = 200) -> float:
    """Bisection-safeguarded Newton for an increasing function with f(lo) < 0 < f(hi)."""
    x = 0.5 * (lo + hi)
    for _ in range(maxiter):
        fx = f(x)
        if abs(fx) < tol:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        d = df(x)
        x_new = x - fx / d if d > 0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) < 1e-15 * max(1.0, abs(x)):
            return x_new
        x = x_new
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def lambda_star(model: LevyModel) -> float:
    """Unique positive zero of ``Psi'`` for a model with negative mean."""
    if not model.mean < 0:
        raise PreconditionError(f"lambda_* needs a negative mean, got E xi_1 = {model.mean}")
    hi = _upper_bracket(model, 0.0, lambda lam: psi_d1(model, lam))
    return _safe_newton(lambda lam: psi_d1(model, lam), lambda lam: psi_d2(model, lam), 0.0, hi)


def right_inverse(model: LevyModel, q: float) -> float:
    """``psi(q) = sup{lam >= 0 : Psi(lam) = q}``."""
    if q < 0:
        raise DomainError(f"q={q} must be nonnegative")
    if not model.spectrally_negative:
        raise PreconditionError("right inverse is only used for spectrally negative models")
    return _right_inverse_any(model, q)


def _minimiser(model: LevyModel) -> float:
    """Point where the convex ``Psi`` attains its minimum on the strip."""
    if psi_d1(model, 0.0) < 0:
        return lambda_star(model)
    lo_strip = model.strip[0]
    step = 1.0
    lo = -step
    while True:
        if lo <= lo_strip:
            lo = 0.5 * lo_strip if math.isfinite(lo_strip) else lo
            for _ in range(200):
                if psi_d1(model, lo) < 0:
                    break
                lo = 0.5 * (lo + lo_strip)
            else:
                raise PreconditionError("Psi has no stationary point inside the strip")
            break
        if psi_d1(model, lo) < 0:
            break
        step *= 2.0
        lo = -step
    return _safe_newton(lambda lam: psi_d1(model, lam), lambda lam: psi_d2(model, lam), lo, 0.0)


def largest_root(model: LevyModel, q: float) -> float:
    """Largest real solution of ``Psi(lam) = q``; allows ``q < 0`` down to ``min Psi``.

    Coincides with ``right_inverse`` for ``q >= 0``; negative ``q`` arises
    for scale functions of tilted models.
    """
    if q >= 0:
        return _right_inverse_any(model, q)
    start = _minimiser(model)
    f = lambda lam: psi(model, lam) - q
    if f(start) > 0:
        raise DomainError(f"q={q} lies below min Psi={psi(model, start)}")
    hi = _upper_bracket(model, start, f)
    return _safe_newton(f, lambda lam: psi_d1(model, lam), start, hi, tol=1e-13)


def _right_inverse_any(model: LevyModel, q: float) -> float:
    # the larger root: search to the right of the minimiser of Psi on [0, inf)
    start = lambda_star(model) if model.mean < 0 else 0.0
    if q == 0 and model.mean >= 0:
        return 0.0
    f = lambda lam: psi(model, lam) - q
    if f(start) >= 0:
        return start
    hi = _upper_bracket(model, start, f)
    return _safe_newton(f, lambda lam: psi_d1(model, lam), start, hi, tol=1e-13)


def esscher(model: LevyModel, c: float) -> LevyModel:
    """Model of ``xi`` under the change of measure ``exp(c (xi_t - x) - Psi(c) t)``."""
    model._check_strip(c)
    if c == 0:
        return model
    return LevyModel(model.drift + model.gaussian_var * c, model.gaussian_var,
                     tuple(j.tilted(c) for j in model.jumps))


def dual(model: LevyModel) -> LevyModel:
    """Model of ``-xi``."""
    return LevyModel(-model.drift, model.gaussian_var, tuple(j.reflected() for j in model.jumps))


def sample_increment(model: LevyModel, dt: float, rng: np.random.Generator, size: int | None = None):
    """Draw ``xi_dt - xi_0``: Gaussian part plus Poisson many jumps per component."""
    if not dt > 0:
        raise DomainError(f"dt={dt} must be positive")
    n = 1 if size is None else size
    out = model.drift * dt + math.sqrt(model.gaussian_var * dt) * rng.standard_normal(n)
    for j in model.jumps:
        counts = rng.poisson(j.rate * dt, n)
        total = int(counts.sum())
        if total:
            sizes = j.sample(rng, total)
            owner = np.repeat(np.arange(n), counts)
            out += np.bincount(owner, weights=sizes, minlength=n)
    return float(out[0]) if size is None else out


def grid_values(model: LevyModel, lams: Iterable[float]) -> np.ndarray:
    """Rows ``(lam, Psi, Psi', Psi'')`` for tabulation."""
    rows = [(lam, psi(model, lam), psi_d1(model, lam), psi_d2(model, lam)) for lam in lams]
    return np.array(rows)
