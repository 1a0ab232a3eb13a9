"""Monte-Carlo estimates and the small statistics toolbox used by the checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class McEstimate:
    """Point estimate with standard error from ``n`` i.i.d. replicates."""

    mean: float
    se: float
    n: int
    capped_fraction: float = 0.0
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.se < 0:
            raise ValueError(f"standard error must be >= 0, got {self.se}")
        if self.n < 1:
            raise ValueError(f"replicate count must be positive, got {self.n}")
        if not 0.0 <= self.capped_fraction <= 1.0:
            raise ValueError(f"capped fraction must lie in [0,1], got {self.capped_fraction}")

    @classmethod
    def from_samples(cls, samples, capped_fraction: float = 0.0, warnings=()) -> "McEstimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(x.mean()), se, n, capped_fraction, tuple(warnings))

    def scaled(self, factor: float) -> "McEstimate":
        return McEstimate(self.mean * factor, self.se * abs(factor), self.n, self.capped_fraction, self.warnings)

    def z_score(self, target: float, other_se: float = 0.0) -> float:
        s = math.hypot(self.se, other_se)
        if s == 0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / s

    def __sub__(self, other: "McEstimate") -> "McEstimate":
        return McEstimate(self.mean - other.mean, math.hypot(self.se, other.se), min(self.n, other.n),
                          max(self.capped_fraction, other.capped_fraction))

    def __add__(self, other: "McEstimate") -> "McEstimate":
        return McEstimate(self.mean + other.mean, math.hypot(self.se, other.se), min(self.n, other.n),
                          max(self.capped_fraction, other.capped_fraction))


def combined_se(*estimates: McEstimate) -> float:
    return math.sqrt(math.fsum(e.se ** 2 for e in estimates))


def ks_statistic(samples: Sequence[float], cdf: Callable) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("KS statistic needs at least one sample")
    f = np.asarray(cdf(x), dtype=float) * np.ones(n)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    intercept_stderr: float


def tail_slope_fit(y: Sequence[float], log_p: Sequence[float], se: Sequence[float] | None = None) -> SlopeFit:
    """Weighted least squares of ``log_p`` on ``y`` with weights ``1/se^2``.

    ``stderr`` is the slope standard error from the weights when ``se`` is
    given and from the residual scatter otherwise.
    """
    y = np.asarray(y, dtype=float)
    lp = np.asarray(log_p, dtype=float)
    if y.size < 3:
        raise ValueError(f"slope fit needs at least 3 points, got {y.size}")
    if not np.all(np.isfinite(lp)):
        raise ValueError("log-probabilities must be finite")
    w = np.ones_like(y) if se is None else 1.0 / np.asarray(se, dtype=float) ** 2
    design = np.column_stack([y, np.ones_like(y)])
    gram = design.T @ (w[:, None] * design)
    if abs(np.linalg.det(gram)) < 1e-14 * max(1.0, np.abs(gram).max() ** 2):
        raise ValueError("degenerate design matrix: y values must not all coincide")
    coef = np.linalg.solve(gram, design.T @ (w * lp))
    cov = np.linalg.inv(gram)
    if se is None:
        resid = lp - design @ coef
        dof = y.size - 2
        cov = cov * (resid @ resid / dof)
    return SlopeFit(float(coef[0]), float(coef[1]), float(math.sqrt(max(cov[0, 0], 0.0))),
                    float(math.sqrt(max(cov[1, 1], 0.0))))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    return float(s * s / np.dot(w, w)) if s > 0 else 0.0
