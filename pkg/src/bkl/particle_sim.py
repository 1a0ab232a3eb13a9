"""Branching killed Lévy process: trees, survival, maxima, Yaglom samples.

Two estimators are available for quantities at a fixed time ``t``:

* ``"naive"`` simulates whole trees and counts events;
* ``"spine"`` simulates the tree along a size-biased spine and averages
  ``1{spine alive} / Z_t`` (or ``1{spine above y} / #{above y}``), which
  equals ``e^{alpha t} P(Z_t > 0)`` (resp. ``e^{alpha t} P(M_t > y)``).
  For negative-mean motions the spine is additionally tilted by
  ``lambda_*`` and carries the likelihood ratio
  ``exp(-lambda_* (xi_t - x) + Psi(lambda_*) t)``.

The spine estimator stays accurate where survival is too rare to observe
directly (``t`` of order ``1/alpha`` and beyond).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .branching_law import ConfigurationError, DomainError, OffspringLaw, small_phi_array
from .levy_models import LevyModel, esscher, lambda_star, psi, psi_d1
from .parallel import run_chunks
from .paths import pack_model
from .rng import seed_to_uint
from .stats import McEstimate, effective_sample_size
from .fluctuation import killed_positions
from .trees import batch_spine, batch_trees

CAPPED_WARN = 0.01


class AcceptanceError(RuntimeError):
    """Conditioning event too rare for rejection sampling."""


@dataclass(frozen=True)
class SimConfig:
    """Everything a tree simulation needs besides the start position.

    ``horizon`` bounds simulated time; runs of the all-time maximum treat
    trees still alive at the horizon as capped.
    """

    model: LevyModel
    law: OffspringLaw
    dt: float = 0.05
    horizon: float = 64.0
    checkpoints: tuple[float, ...] = ()
    max_live: int = 100_000
    max_events: int = 10_000_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(float(c) for c in self.checkpoints))
        if not self.dt > 0:
            raise ConfigurationError(f"dt={self.dt} must be positive")
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon={self.horizon} must be positive")
        if any(b < a for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise ConfigurationError("checkpoints must be sorted")
        if any(c < 0 or c > self.horizon for c in self.checkpoints):
            raise ConfigurationError("checkpoints must lie in [0, horizon]")
        if self.max_live < 1 or self.max_events < 1:
            raise ConfigurationError("caps must be positive")
        seed_to_uint(self.seed)

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class TrajectoryOutcome:
    extinction_time: float | None
    running_max: tuple[float, ...]
    alltime_max: float
    alive_counts: tuple[int, ...]
    capped: bool


@dataclass
class TreeBatch:
    extinction_time: np.ndarray  # NaN where the tree reached the horizon
    alltime_max: np.ndarray
    capped: np.ndarray
    reached_horizon: np.ndarray
    alive: np.ndarray
    running_max: np.ndarray
    above: np.ndarray

    @property
    def n(self) -> int:
        return self.alltime_max.size


@dataclass
class SpineBatch:
    x: float
    t: float
    ylevels: np.ndarray
    tilt: float
    psi_tilt: float
    spine_alive: np.ndarray
    spine_pos: np.ndarray
    others_alive: np.ndarray
    others_max: np.ndarray
    others_above: np.ndarray
    capped: np.ndarray

    @property
    def n(self) -> int:
        return self.spine_pos.size

    @property
    def likelihood_ratio(self) -> np.ndarray:
        if self.tilt == 0.0:
            return np.ones(self.n)
        return np.exp(-self.tilt * (self.spine_pos - self.x) + self.psi_tilt * self.t)

    def survival_weights(self) -> np.ndarray:
        """Per-sample unbiased values of ``e^{alpha t} P_x(zeta > t)``."""
        return np.where(self.spine_alive, self.likelihood_ratio / (1.0 + self.others_alive), 0.0)

    def tail_weights(self, level_index: int) -> np.ndarray:
        """Per-sample values of ``e^{alpha t} P_x(M_t > y_l)``."""
        y = self.ylevels[level_index]
        up = self.spine_alive & (self.spine_pos > y)
        count = self.others_above[:, level_index] + 1
        return np.where(up, self.likelihood_ratio / count, 0.0)

    def population_max(self) -> np.ndarray:
        return np.where(self.spine_alive, np.maximum(self.spine_pos, self.others_max), -np.inf)


def _law_arrays(law: OffspringLaw):
    pcdf = np.cumsum(law.probabilities)
    pcdf[-1] = 1.0
    if law.is_pure_death:
        sb = np.array([1.0])
    else:
        sb = np.cumsum(law.size_biased())
        sb[-1] = 1.0
    return pcdf, sb


def _tree_chunk(config: SimConfig, x: float, horizon: float, checkpoints, ylevels, track_max: bool,
                start: int, count: int):
    pcdf, _ = _law_arrays(config.law)
    d, v, j, jt = pack_model(config.model)
    return batch_trees(float(x), seed_to_uint(config.seed), int(start), int(count), float(horizon),
                       np.asarray(checkpoints, dtype=float), np.asarray(ylevels, dtype=float), pcdf,
                       config.law.beta, d, v, j, jt, config.dt, bool(track_max), config.max_live,
                       config.max_events)


def run_trees(config: SimConfig, x: float, n: int, checkpoints: Sequence[float] | None = None,
              ylevels: Sequence[float] = (), track_max: bool = False, horizon: float | None = None,
              workers: int | None = None) -> TreeBatch:
    """Simulate replicas ``0..n-1`` of the tree from ``x``."""
    if not x > 0:
        raise DomainError(f"x={x} must be positive")
    cps = config.checkpoints if checkpoints is None else tuple(float(c) for c in checkpoints)
    hz = config.horizon if horizon is None else float(horizon)
    parts = run_chunks(_tree_chunk, (config, x, hz, cps, tuple(ylevels), track_max), n, workers)
    cols = list(zip(*parts))
    zeta, amax, capped, reached, alive, rmax, above = (np.concatenate(c) for c in cols)
    zeta = np.where(reached, np.nan, zeta)
    return TreeBatch(zeta, amax, capped, reached, alive, rmax, above)


def simulate(config: SimConfig, x: float, index: int = 0) -> TrajectoryOutcome:
    """One tree (replica ``index`` of ``config.seed``) recorded at ``config.checkpoints``."""
    if not x > 0:
        raise DomainError(f"x={x} must be positive")
    parts = _tree_chunk(config, x, config.horizon, config.checkpoints, (), True, index, 1)
    zeta, amax, capped, reached, alive, rmax, _ = parts
    ext = None if (reached[0] or capped[0]) else float(zeta[0])
    return TrajectoryOutcome(ext, tuple(float(v) for v in rmax[0]), float(amax[0]),
                             tuple(int(v) for v in alive[0]), bool(capped[0]))


def _resolve_tilt(model: LevyModel, tilt) -> float:
    if tilt == "auto":
        return lambda_star(model) if psi_d1(model, 0.0) < 0 else 0.0
    return float(tilt)


def _spine_chunk(config: SimConfig, x: float, t: float, ylevels, tilt: float, start: int, count: int):
    pcdf, sb = _law_arrays(config.law)
    d, v, j, jt = pack_model(config.model)
    sd, sv, sj, sjt = pack_model(esscher(config.model, tilt)) if tilt != 0.0 else (d, v, j, jt)
    return batch_spine(float(x), seed_to_uint(config.seed), int(start), int(count), float(t),
                       np.asarray(ylevels, dtype=float), sb, pcdf, config.law.beta, config.law.mean,
                       sd, sv, sj, sjt, d, v, j, jt, config.dt, config.max_live, config.max_events)


def run_spine(config: SimConfig, x: float, t: float, n: int, ylevels: Sequence[float] = (),
              tilt="auto", workers: int | None = None) -> SpineBatch:
    """Spine samples ``0..n-1`` up to time ``t``."""
    if not x > 0:
        raise DomainError(f"x={x} must be positive")
    c = _resolve_tilt(config.model, tilt)
    parts = run_chunks(_spine_chunk, (config, x, t, tuple(ylevels), c), n, workers)
    sa, sp, oa, om, oab, cap = (np.concatenate(col) for col in zip(*parts))
    return SpineBatch(float(x), float(t), np.asarray(ylevels, dtype=float), c,
                      psi(config.model, c) if c else 0.0, sa, sp, oa, om, oab, cap)


def _warn_capped(frac: float) -> tuple[str, ...]:
    if frac > CAPPED_WARN:
        msg = f"{100 * frac:.2f}% of replicates hit a cap; raise max_live/max_events"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return (msg,)
    return ()


def estimate_survival(config: SimConfig, x: float, t: float, n: int, method: str = "naive",
                      tilt="auto", workers: int | None = None) -> McEstimate:
    """``u(x, t) = P_x(zeta > t)``."""
    if t < 0:
        raise DomainError(f"t={t} must be nonnegative")
    if t > config.horizon:
        raise DomainError(f"t={t} exceeds the configured horizon {config.horizon}")
    if not x > 0:
        raise DomainError(f"x={x} must be positive")
    if t == 0:
        return McEstimate(1.0, 0.0, n)
    if method == "naive":
        batch = run_trees(config, x, n, checkpoints=[t], horizon=t, workers=workers)
        frac = float(batch.capped.mean())
        return McEstimate.from_samples(batch.alive[:, 0] > 0, frac, _warn_capped(frac))
    if method == "spine":
        sb = run_spine(config, x, t, n, tilt=tilt, workers=workers)
        frac = float(sb.capped.mean())
        return McEstimate.from_samples(sb.survival_weights(), frac, _warn_capped(frac)).scaled(
            math.exp(-config.law.alpha * t))
    raise ValueError(f"unknown method {method!r}")


def estimate_mt_tail(config: SimConfig, x: float, t: float, y, n: int, method: str = "naive",
                     tilt="auto", workers: int | None = None):
    """``Q_y(x, t) = P_x(M_t > y)``; a sequence of ``y`` shares one set of replicates."""
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(ys < 0):
        raise DomainError(f"y must be >= 0, got {ys}")
    if t > config.horizon:
        raise DomainError(f"t={t} exceeds the configured horizon {config.horizon}")
    if method == "naive":
        batch = run_trees(config, x, n, checkpoints=[t], ylevels=ys, horizon=t, workers=workers)
        frac = float(batch.capped.mean())
        w = _warn_capped(frac)
        out = [McEstimate.from_samples(batch.above[:, 0, k] > 0, frac, w) for k in range(ys.size)]
    elif method == "spine":
        sb = run_spine(config, x, t, n, ylevels=ys, tilt=tilt, workers=workers)
        frac = float(sb.capped.mean())
        w = _warn_capped(frac)
        scale = math.exp(-config.law.alpha * t)
        out = [McEstimate.from_samples(sb.tail_weights(k), frac, w).scaled(scale) for k in range(ys.size)]
    else:
        raise ValueError(f"unknown method {method!r}")
    return out[0] if np.ndim(y) == 0 else out


def estimate_alltime_max_tail(config: SimConfig, x: float, y, n: int, workers: int | None = None):
    """``v(x, y) = P_x(M > y)`` from trees run to extinction (or the horizon cap)."""
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if not (x > 0 and np.all(ys > x)):
        raise DomainError(f"need 0 < x < y, got x={x}, y={ys}")
    batch = run_trees(config, x, n, checkpoints=[], track_max=True, workers=workers)
    bad = batch.capped | batch.reached_horizon
    frac = float(bad.mean())
    w = _warn_capped(frac)
    out = [McEstimate.from_samples(batch.alltime_max > yk, frac, w) for yk in ys]
    return out[0] if np.ndim(y) == 0 else out


def yaglom_samples(config: SimConfig, x: float, t: float, n_conditioned: int, method: str = "rejection",
                   tilt="auto", workers: int | None = None, ess_factor: float = 10.0,
                   max_trees: int = 50_000_000) -> np.ndarray:
    """``n_conditioned`` draws of ``M_t`` given ``zeta > t`` (un-normalised).

    ``"rejection"`` keeps surviving trees. ``"spine"`` draws a weighted
    pool of spine samples (weights as in ``estimate_survival``), grows it
    until its effective size reaches ``ess_factor * n_conditioned``, and
    resamples.
    """
    if t > config.horizon:
        raise DomainError(f"t={t} exceeds the configured horizon {config.horizon}")
    if method == "rejection":
        return _yaglom_rejection(config, x, t, n_conditioned, workers, max_trees)
    if method == "spine":
        return _yaglom_spine(config, x, t, n_conditioned, tilt, workers, ess_factor)
    raise ValueError(f"unknown method {method!r}")


def _yaglom_rejection(config, x, t, n_cond, workers, max_trees):
    got: list[np.ndarray] = []
    tried = 0
    accepted = 0
    block = 65536
    while accepted < n_cond:
        batch = _tree_block(config, x, t, tried, block, workers)
        ok = batch.alive[:, 0] > 0
        got.append(batch.running_max[ok, 0])
        accepted += int(ok.sum())
        tried += block
        rate = accepted / tried
        if (accepted >= 10 and rate < 1e-6) or (accepted == 0 and tried >= 5_000_000) or tried >= max_trees:
            raise AcceptanceError(f"acceptance rate {rate:.2e} after {tried} trees; use a smaller t "
                                  "or method='spine'")
    return np.concatenate(got)[:n_cond]


def _tree_block(config, x, t, start, count, workers):
    parts = run_chunks(_tree_chunk_offset, (config, x, t, start), count, workers)
    zeta, amax, capped, reached, alive, rmax, above = (np.concatenate(c) for c in zip(*parts))
    return TreeBatch(zeta, amax, capped, reached, alive, rmax, above)


def _tree_chunk_offset(config, x, t, offset, start, count):
    return _tree_chunk(config, x, t, (t,), (), False, offset + start, count)


def _spine_block(config, x, t, c, start, count, workers):
    parts = run_chunks(_spine_chunk_offset, (config, x, t, c, start), count, workers)
    sa, sp, oa, om, oab, cap = (np.concatenate(col) for col in zip(*parts))
    return SpineBatch(float(x), float(t), np.zeros(0), c, psi(config.model, c) if c else 0.0,
                      sa, sp, oa, om, oab, cap)


def _spine_chunk_offset(config, x, t, c, offset, start, count):
    return _spine_chunk(config, x, t, (), c, offset + start, count)


def _yaglom_spine(config, x, t, n_cond, tilt, workers, ess_factor):
    c = _resolve_tilt(config.model, tilt)
    weights: list[np.ndarray] = []
    values: list[np.ndarray] = []
    pool = 0
    block = max(16 * n_cond, 8192)
    while True:
        sb = _spine_block(config, x, t, c, pool, block, workers)
        weights.append(sb.survival_weights())
        values.append(sb.population_max())
        pool += block
        w = np.concatenate(weights)
        if effective_sample_size(w) >= ess_factor * n_cond:
            break
        if pool >= 400 * block:
            raise AcceptanceError(f"effective sample size {effective_sample_size(w):.0f} after {pool} "
                                  "spine samples")
    v = np.concatenate(values)
    rng = np.random.default_rng([int(config.seed), 0x59A6, int(round(t * 1e6))])
    idx = rng.choice(v.size, size=n_cond, replace=True, p=w / w.sum())
    return v[idx]


@dataclass
class FeynmanKacTable:
    x_grid: np.ndarray
    t_grid: np.ndarray
    y: float
    values: np.ndarray  # shape (len(x_grid), len(t_grid))
    se: np.ndarray
    clamped_fraction: np.ndarray
    picard_sweeps: int

    def at(self, x: float, t: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.x_grid - x)))
        k = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.x_grid[i] - x) > 1e-12 or abs(self.t_grid[k] - t) > 1e-12:
            raise KeyError(f"({x}, {t}) is not a grid cell")
        return float(self.values[i, k]), float(self.se[i, k])


def feynman_kac_rhs(config: SimConfig, x_grid: Sequence[float], t_grid: Sequence[float], y: float, n: int,
                    substep: float = 0.02, sweeps: int = 6, tol: float = 1e-9) -> FeynmanKacTable:
    """Build ``Q_y`` on an ``(x, t)`` grid from the single-path representation

        Q_y(x, t) = e^{-alpha t} E_x[1{tau_0^- > t, xi_t > y} exp(-int_0^t phi(Q_y(xi_s, t - s)) ds)].

    Layers are built in increasing ``t``. The integrand is read from the
    table by bilinear interpolation; the part of the path near ``s = 0``
    needs the layer under construction, which is found by fixed-point
    sweeps. Paths leaving the ``x`` range are clamped to the edge and the
    clamped fraction is reported per cell. With a Gaussian component the
    node ``x = 0`` (where ``Q_y = 0``) is added to the table.
    """
    xg = np.asarray(x_grid, dtype=float)
    tg = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(xg) <= 0) or np.any(np.diff(tg) <= 0) or tg[0] <= 0 or xg[0] <= 0:
        raise ValueError("grids must be positive and strictly ascending")
    law = config.law
    alpha = law.alpha
    add_zero = config.model.gaussian_var > 0
    xn = np.concatenate([[0.0], xg]) if add_zero else xg.copy()
    tn = np.concatenate([[0.0], tg])
    table = np.zeros((xn.size, tn.size))
    table[:, 0] = (xn > y).astype(float)
    if add_zero:
        table[0, 0] = 0.0
    off = 1 if add_zero else 0
    se = np.zeros((xg.size, tg.size))
    clamped = np.zeros((xg.size, tg.size))

    def lookup(pos, tau, layer):
        # bilinear in (x, t) for one remaining time ``tau``; ``layer`` is the current column
        kk = min(max(int(np.searchsorted(tn[: layer + 1], tau, side="left")), 1), layer)
        t0, t1 = tn[kk - 1], tn[kk]
        wt = (tau - t0) / (t1 - t0)
        q0 = np.interp(pos, xn, table[:, kk - 1])
        q1 = np.interp(pos, xn, table[:, kk])
        return (1 - wt) * q0 + wt * q1

    sweeps_used = 0
    for k in range(1, tn.size):
        t = tn[k]
        steps = max(1, int(math.ceil(t / substep - 1e-9)))
        s_grid = np.linspace(0.0, t, steps + 1)
        kept = []
        for i, xv in enumerate(xg):
            pos = killed_positions(config.model, xv, s_grid[1:], n, config.dt,
                                   config.seed + 1_000_003 * k + 7919 * i)
            pos = np.concatenate([np.full((n, 1), xv), pos], axis=1)
            good = ~np.isnan(pos[:, -1]) & (pos[:, -1] > y)
            p = pos[good]
            clamped[i, k - 1] = float(np.any(p > xn[-1], axis=1).sum()) / n
            kept.append(p)
        table[off:, k] = table[off:, k - 1]
        for sweep in range(sweeps):
            new = np.empty(xg.size)
            for i, p in enumerate(kept):
                if p.shape[0] == 0:
                    new[i] = 0.0
                    se[i, k - 1] = 0.0
                    continue
                tau = t - s_grid
                q = np.empty_like(p)
                for j in range(tau.size):
                    q[:, j] = lookup(p[:, j], tau[j], k)
                q = np.clip(q, 0.0, 1.0)
                ph = small_phi_array(law, q)
                integral = np.sum(0.5 * (ph[:, 1:] + ph[:, :-1]) * np.diff(s_grid)[None, :], axis=1)
                vals = np.zeros(n)
                vals[: p.shape[0]] = math.exp(-alpha * t) * np.exp(-integral)
                new[i] = vals.mean()
                se[i, k - 1] = vals.std(ddof=1) / math.sqrt(n)
            change = float(np.max(np.abs(new - table[off:, k])))
            table[off:, k] = new
            sweeps_used = max(sweeps_used, sweep + 1)
            if change < tol:
                break
    return FeynmanKacTable(xg, tg, float(y), table[off:, 1:].copy(), se, clamped, sweeps_used)
