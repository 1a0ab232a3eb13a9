"""Experiment runner: dispatch a spec, emit CSV plus a JSON summary.

Every Monte-Carlo table shares one header; estimates are written next to
their regime-scaled versions and the limiting prediction (an interval
when the constant is only bracketed). Floats are written with ``repr`` so
that identical numbers give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import asymptotics as asy
from .branching_law import (ConfigurationError, big_phi, c_sub, llogl_value, small_phi, survival_g_grid)
from .config import ExperimentSpec
from .fluctuation import (
    conditioned_rayleigh_check, exit_up_prob, mc_exit_up, renewal_R, renewal_R_hat_star, renewal_R_star,
)
from .levy_models import lambda_star, psi, psi_d1, psi_d2, right_inverse
from .particle_sim import (
    SimConfig, estimate_alltime_max_tail, estimate_mt_tail, estimate_survival, feynman_kac_rhs, run_trees,
    yaglom_samples,
)
from .scale import ScaleFunctionEvaluator
from .stats import McEstimate, combined_se, ks_statistic, ks_two_sample, tail_slope_fit  # noqa: F401

MC_HEADER = ["x", "t", "y", "estimate", "se", "n", "capped_fraction", "seed", "scaled", "scaled_se",
             "prediction_low", "prediction_high", "spec_hash"]
TABLE_HEADER = ["quantity", "arg", "value", "se", "low", "high", "spec_hash"]


@dataclass
class ResultTable:
    kind: str
    header: list[str]
    rows: list[list]
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def sub_seed(seed: int, *keys: int) -> int:
    """A 32-bit stream id derived from ``seed`` and row keys."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint32)[0])


def _need(spec: ExperimentSpec, *grids: str) -> None:
    for g in grids:
        if not getattr(spec, g):
            raise ConfigurationError(f"kind {spec.kind!r} needs a non-empty {g!r} grid")


def _sim_config(spec: ExperimentSpec, horizon: float) -> SimConfig:
    opts = spec.options
    return SimConfig(spec.model, spec.law, dt=spec.dt or 0.05, horizon=horizon,
                     max_live=int(opts.get("max_live", 100_000)),
                     max_events=int(opts.get("max_events", 10_000_000)), seed=spec.seed)


def _mc_row(spec, x, t, y, est: McEstimate, scale=None, pred=None):
    lo, hi = (pred if isinstance(pred, tuple) else (pred, pred))
    scaled = None if scale is None else est.mean * scale
    scaled_se = None if scale is None else est.se * abs(scale)
    return [x, t, y, est.mean, est.se, est.n, est.capped_fraction, spec.seed, scaled, scaled_se, lo, hi,
            spec.spec_hash()]


def _regime(spec: ExperimentSpec) -> str:
    regime = asy.regime_of(spec.model)
    if spec.required_regime and regime != spec.required_regime:
        raise ConfigurationError(f"kind {spec.kind!r} needs a {spec.required_regime} model, got {regime}")
    return regime


def _time_scale(regime: str, spec: ExperimentSpec, t: float) -> float:
    alpha = spec.law.alpha
    if regime == asy.ZERO_MEAN:
        return math.sqrt(t) * math.exp(alpha * t)
    if regime == asy.POSITIVE_MEAN:
        return math.exp(alpha * t)
    return t ** 1.5 * math.exp((alpha - psi(spec.model, lambda_star(spec.model))) * t)


def _constant_kwargs(spec: ExperimentSpec, workers) -> dict:
    o = spec.options
    return {"N": float(o.get("N", 8.0)), "n_per_z": int(o.get("n_per_z", 2000)),
            "seed": sub_seed(spec.seed, 99), "workers": workers}


def _table(spec, rows):
    return [[*r, spec.spec_hash()] for r in rows]


# analytic tables

def _run_law(spec, workers):
    law = spec.law
    n_u = int(spec.options.get("u_points", 11))
    ts = spec.t or (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0)
    rows = [["m", None, law.mean, None, None, None], ["alpha", None, law.alpha, None, None, None],
            ["beta", None, law.beta, None, None, None], ["llogl", None, llogl_value(law), None, None, None]]
    for u in np.linspace(0.0, 1.0, n_u):
        rows.append(["Phi", float(u), big_phi(law, float(u)), None, None, None])
    for u in np.linspace(0.0, 1.0, n_u):
        rows.append(["phi", float(u), small_phi(law, float(u)), None, None, None])
    g = survival_g_grid(law, ts)
    for t, gv in zip(ts, g):
        rows.append(["g", t, float(gv), None, None, None])
        rows.append(["e^{alpha t} g", t, math.exp(law.alpha * t) * float(gv), None, None, None])
    csub = c_sub(law)
    rows.append(["C_sub", None, csub, None, None, None])
    return ResultTable(spec.kind, TABLE_HEADER, _table(spec, rows), {"C_sub": csub, "alpha": law.alpha})


def _run_model(spec, workers):
    m = spec.model
    lams = spec.z or tuple(float(v) for v in np.linspace(0.0, 2.0, 9))
    rows = [["mean", None, psi_d1(m, 0.0), None, None, None], ["variance", None, psi_d2(m, 0.0), None, None, None]]
    for lam in lams:
        rows.append(["Psi", lam, psi(m, lam), None, None, None])
        rows.append(["Psi'", lam, psi_d1(m, lam), None, None, None])
        rows.append(["Psi''", lam, psi_d2(m, lam), None, None, None])
    summary = {}
    if psi_d1(m, 0.0) < 0:
        ls = lambda_star(m)
        rows.append(["lambda_*", None, ls, None, None, None])
        rows.append(["Psi(lambda_*)", None, psi(m, ls), None, None, None])
        summary["lambda_*"] = ls
    if m.spectrally_negative:
        for q in spec.q or (0.0,):
            rows.append(["psi(q)", q, right_inverse(m, q), None, None, None])
    return ResultTable(spec.kind, TABLE_HEADER, _table(spec, rows), summary)


def _run_scale(spec, workers):
    _need(spec, "x")
    nodes = int(spec.options.get("nodes", 48))
    rows = []
    for q in spec.q or (0.0,):
        ev = ScaleFunctionEvaluator(spec.model, q, nodes=nodes)
        for x in spec.x:
            rows.append([f"W^({q!r})", x, float(ev(x)), None, None, None])
    return ResultTable(spec.kind, TABLE_HEADER, _table(spec, rows))


# single-path Monte Carlo

def _run_exit(spec, workers):
    _need(spec, "x", "y")
    qs = spec.q or (0.0,)
    if len(qs) != 1:
        raise ConfigurationError("exit runs take a single q")
    q = qs[0]
    dt = spec.dt or 1e-3
    rows = []
    for i, x in enumerate(spec.x):
        for k, y in enumerate(spec.y):
            if not x < y:
                continue
            est = mc_exit_up(spec.model, q, x, y, spec.n, dt, sub_seed(spec.seed, i, k))
            pred = exit_up_prob(spec.model, q, x, y) if spec.model.spectrally_negative else None
            rows.append(_mc_row(spec, x, None, y, est, pred=pred))
    return ResultTable(spec.kind, MC_HEADER, rows, {"q": q})


def _run_renewal(spec, workers):
    _need(spec, "x")
    which = spec.options.get("which", "plain")
    fn = {"plain": renewal_R, "star": renewal_R_star, "hat_star": renewal_R_hat_star}.get(which)
    if fn is None:
        raise ConfigurationError(f"unknown renewal function {which!r}")
    dt = spec.dt or 1e-3
    rows = []
    for i, x in enumerate(spec.x):
        est = fn(spec.model, x, spec.n, dt, sub_seed(spec.seed, i))
        # Brownian models creep downward at every tilt, so R = x
        pred = x if spec.model.is_brownian else None
        rows.append(_mc_row(spec, x, None, None, est, pred=pred))
    return ResultTable(spec.kind, MC_HEADER, rows, {"which": which})


def _run_cond(spec, workers):
    _need(spec, "x", "t")
    a_grid = spec.y or (0.5, 1.0, 1.5, 2.0, 3.0)
    rows, summary = [], {}
    for i, x in enumerate(spec.x):
        for k, t in enumerate(spec.t):
            rep = conditioned_rayleigh_check(spec.model, x, t, spec.n, spec.dt or 1.0, sub_seed(spec.seed, i, k),
                                             a_grid)
            for a, est, lim in zip(rep.a_grid, rep.estimates, rep.limits):
                rows.append(_mc_row(spec, x, t, float(a), est, pred=float(lim)))
            summary[f"ks(x={x!r},t={t!r})"] = rep.ks
    return ResultTable(spec.kind, MC_HEADER, rows, summary)


# branching system

def _run_sim(spec, workers):
    _need(spec, "x", "t")
    cfg = _sim_config(spec, spec.horizon or max(spec.t))
    ys = [y for y in spec.y if y >= 0]
    rows = []
    for i, x in enumerate(spec.x):
        batch = run_trees(cfg.with_seed(sub_seed(spec.seed, i)), x, spec.n, checkpoints=spec.t, ylevels=ys,
                          workers=workers)
        frac = float(batch.capped.mean())
        for k, t in enumerate(spec.t):
            rows.append(_mc_row(spec, x, t, None, McEstimate.from_samples(batch.alive[:, k] > 0, frac)))
            for l, y in enumerate(ys):
                rows.append(_mc_row(spec, x, t, y, McEstimate.from_samples(batch.above[:, k, l] > 0, frac)))
    return ResultTable(spec.kind, MC_HEADER, rows)


def _run_survival(spec, workers):
    _need(spec, "x", "t")
    regime = _regime(spec)
    method = spec.options.get("method", "spine")
    cfg = _sim_config(spec, spec.horizon or max(spec.t))
    rows, summary = [], {}
    for i, x in enumerate(spec.x):
        kw = {"c0_kwargs": _constant_kwargs(spec, workers)} if regime == asy.NEGATIVE_MEAN else {}
        pred = asy.survival_limit(spec.model, spec.law, x, seed=sub_seed(spec.seed, i, 1), **kw)
        summary[f"prediction(x={x!r})"] = pred.to_dict()
        for k, t in enumerate(spec.t):
            est = estimate_survival(cfg.with_seed(sub_seed(spec.seed, i, k)), x, t, spec.n, method, workers=workers)
            rows.append(_mc_row(spec, x, t, None, est, _time_scale(regime, spec, t), pred.constant))
    return ResultTable(spec.kind, MC_HEADER, rows, summary)


def _level(regime: str, spec: ExperimentSpec, t: float, y: float) -> float:
    if regime == asy.ZERO_MEAN:
        return math.sqrt(t) * y
    if regime == asy.POSITIVE_MEAN:
        return math.sqrt(t) * y + psi_d1(spec.model, 0.0) * t
    return y


def _run_mt_tail(spec, workers):
    _need(spec, "x", "t", "y")
    regime = _regime(spec)
    method = spec.options.get("method", "spine")
    cfg = _sim_config(spec, spec.horizon or max(spec.t))
    rows, summary = [], {}
    for i, x in enumerate(spec.x):
        preds = {}
        for y in spec.y:
            kw = {"c1_kwargs": _constant_kwargs(spec, workers)} if regime == asy.NEGATIVE_MEAN else {}
            preds[y] = asy.mt_tail_limit(spec.model, spec.law, x, y, seed=sub_seed(spec.seed, i, 1), **kw)
            summary[f"prediction(x={x!r},y={y!r})"] = preds[y].to_dict()
        for k, t in enumerate(spec.t):
            levels = [_level(regime, spec, t, y) for y in spec.y]
            ests = estimate_mt_tail(cfg.with_seed(sub_seed(spec.seed, i, k)), x, t, levels, spec.n, method,
                                    workers=workers)
            for y, est in zip(spec.y, ests):
                rows.append(_mc_row(spec, x, t, y, est, _time_scale(regime, spec, t), preds[y].constant))
    return ResultTable(spec.kind, MC_HEADER, rows, summary)


def _run_alltime(spec, workers):
    _need(spec, "x", "y")
    law = spec.law
    horizon = spec.horizon or 10.0 / law.alpha
    cfg = _sim_config(spec, horizon)
    rows, summary = [], {}
    for i, x in enumerate(spec.x):
        ys = [y for y in spec.y if y > x]
        pred = asy.alltime_limit(spec.model, law, x) if spec.model.spectrally_negative else None
        rate = right_inverse(spec.model, law.alpha) if spec.model.spectrally_negative else None
        ests = estimate_alltime_max_tail(cfg.with_seed(sub_seed(spec.seed, i)), x, ys, spec.n, workers=workers)
        for y, est in zip(ys, ests):
            scale = math.exp(rate * y) if rate is not None else None
            rows.append(_mc_row(spec, x, None, y, est, scale, None if pred is None else pred.constant))
        info = {"prediction": None if pred is None else pred.to_dict()}
        good = [(y, e) for y, e in zip(ys, ests) if e.mean > 0]
        if len(good) >= 3:
            fit = tail_slope_fit([y for y, _ in good], [math.log(e.mean) for _, e in good],
                                 [e.se / e.mean for _, e in good])
            info["slope_fit"] = {"slope": fit.slope, "stderr": fit.stderr, "prefactor": math.exp(fit.intercept)}
        summary[f"x={x!r}"] = info
    return ResultTable(spec.kind, MC_HEADER, rows, summary)


def _normalise(regime, spec, t, m):
    if regime == asy.ZERO_MEAN:
        return m / math.sqrt(t)
    if regime == asy.POSITIVE_MEAN:
        return (m - psi_d1(spec.model, 0.0) * t) / math.sqrt(t)
    return m


def _run_yaglom(spec, workers):
    _need(spec, "x", "t")
    regime = asy.regime_of(spec.model)
    method = spec.options.get("method", "spine")
    sigma = math.sqrt(psi_d2(spec.model, 0.0))
    cfg = _sim_config(spec, spec.horizon or max(spec.t))
    points = spec.y or tuple(float(v) for v in np.linspace(0.25, 3.0, 12))
    rows, summary = [], {}
    for i, x in enumerate(spec.x):
        for k, t in enumerate(spec.t):
            m = yaglom_samples(cfg.with_seed(sub_seed(spec.seed, i, k)), x, t, spec.n, method, workers=workers)
            z = _normalise(regime, spec, t, m)
            limit = None
            if regime != asy.NEGATIVE_MEAN:
                limit = lambda p: asy.yaglom_limit_cdf(regime, sigma, p)  # noqa: E731
                summary[f"ks(x={x!r},t={t!r})"] = ks_statistic(z, limit)
            for p in points:
                f = float(np.mean(z <= p))
                est = McEstimate(f, math.sqrt(f * (1.0 - f) / z.size), z.size)
                rows.append(_mc_row(spec, x, t, p, est, pred=None if limit is None else float(limit(p))))
    return ResultTable(spec.kind, MC_HEADER, rows, summary)


def _run_fk(spec, workers):
    _need(spec, "x", "t", "y")
    o = spec.options
    cfg = _sim_config(spec, max(spec.t))
    y = spec.y[0]
    tab = feynman_kac_rhs(cfg, spec.x, spec.t, y, spec.n, substep=float(o.get("substep", 0.02)),
                          sweeps=int(o.get("sweeps", 6)))
    exact = spec.law.is_pure_death and spec.model.is_brownian
    rows = []
    for i, x in enumerate(tab.x_grid):
        for k, t in enumerate(tab.t_grid):
            est = McEstimate(float(tab.values[i, k]), float(tab.se[i, k]), spec.n, float(tab.clamped_fraction[i, k]))
            pred = _pure_death_q(spec, x, t, y) if exact else None
            rows.append(_mc_row(spec, float(x), float(t), y, est, pred=pred))
    return ResultTable(spec.kind, MC_HEADER, rows, {"picard_sweeps": tab.picard_sweeps})


def _pure_death_q(spec, x, t, y):
    """``e^{-beta t} P_x(xi_t > y, tau_0^- > t)`` for Brownian motion, by reflection."""
    from scipy.special import ndtr
    m = spec.model
    mu, s = m.drift, math.sqrt(m.gaussian_var * t)
    # killed density with drift: reflected term carries e^{-2 mu x / var}
    direct = ndtr((x + mu * t - y) / s)
    reflected = math.exp(-2.0 * mu * x / m.gaussian_var) * ndtr((-x + mu * t - y) / s)
    return math.exp(-spec.law.beta * t) * (direct - reflected)


def _run_constants(spec, workers):
    law, model = spec.law, spec.model
    rows = [["C_sub", None, c_sub(law), None, None, None]]
    summary = {}
    if asy.regime_of(model) == asy.NEGATIVE_MEAN and not model.is_lattice:
        kw = _constant_kwargs(spec, workers)
        c0 = asy.estimate_C0(model, law, details=True, **kw)
        rows.append(["C_0(N)", kw["N"], c0.estimate.mean, c0.estimate.se, c0.lower_bound, c0.upper_bound])
        for y in spec.y or (0.0,):
            c1 = asy.estimate_C1(model, law, y, details=True, **kw)
            rows.append(["C_1(y,N)", y, c1.estimate.mean, c1.estimate.se, c1.lower_bound, c1.upper_bound])
        summary["warnings"] = list(c0.warnings)
    if model.spectrally_negative:
        bound = asy.c2_lower_bound(model, law)
        rows.append(["psi(alpha)", None, bound["psi(alpha)"], None, None, None])
        rows.append(["C_2(alpha)", None, None, None, bound["lower"], 1.0])
        rows.append(["E tau_1^+ (tilted)", None, bound["E tau_1^+ (tilted)"], None, None, None])
        mc = asy.tilted_ascent_time(model, law.alpha, n=max(spec.n, 10_000), seed=sub_seed(spec.seed, 7))
        rows.append(["E tau_1^+ (tilted, simulated)", None, mc.mean, mc.se, None, None])
    return ResultTable(spec.kind, TABLE_HEADER, _table(spec, rows), summary)


PREDICT_HEADER = ["quantity", "x", "y", "regime", "scaling", "low", "high", "se", "spec_hash"]


def _run_predict(spec, workers):
    _need(spec, "x")
    law, model = spec.law, spec.model
    regime = asy.regime_of(model)
    kw_c0 = {"c0_kwargs": _constant_kwargs(spec, workers)} if regime == asy.NEGATIVE_MEAN else {}
    kw_c1 = {"c1_kwargs": _constant_kwargs(spec, workers)} if regime == asy.NEGATIVE_MEAN else {}
    rows, summary = [], {}

    def add(name, x, y, p):
        lo, hi = p.constant if isinstance(p.constant, tuple) else (p.constant, p.constant)
        rows.append([name, x, y, p.regime, p.scaling, lo, hi, p.se, spec.spec_hash()])
        summary[f"{name}(x={x!r},y={y!r})"] = p.to_dict()

    for i, x in enumerate(spec.x):
        add("survival", x, None, asy.survival_limit(model, law, x, seed=sub_seed(spec.seed, i), **kw_c0))
        for y in spec.y:
            add("mt_tail", x, y, asy.mt_tail_limit(model, law, x, y, seed=sub_seed(spec.seed, i), **kw_c1))
        if model.spectrally_negative:
            add("alltime", x, None, asy.alltime_limit(model, law, x))
    return ResultTable(spec.kind, PREDICT_HEADER, rows, summary)


RUNNERS: dict[str, Callable] = {
    "law": _run_law, "model": _run_model, "scale": _run_scale, "exit": _run_exit, "renewal": _run_renewal,
    "cond": _run_cond, "sim": _run_sim, "survival": _run_survival, "mt-tail": _run_mt_tail,
    "alltime": _run_alltime, "yaglom": _run_yaglom, "fk": _run_fk, "constants": _run_constants,
    "predict": _run_predict,
}


def _writable_dir(out: str) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out!r}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigurationError(f"output directory {out!r} is not writable")
    return path


def run(spec: ExperimentSpec, workers: int | None = None, out: str | None = None) -> ResultTable:
    """Run ``spec``; with an output directory, write ``<kind>_<hash>.csv`` and ``.json`` there."""
    runner = RUNNERS.get(spec.base_kind)
    if runner is None:
        raise ConfigurationError(f"unknown experiment kind {spec.kind!r}")
    target = out or spec.out
    directory = _writable_dir(target) if target else None
    table = runner(spec, workers)
    if directory is not None:
        stem = f"{spec.base_kind}_{spec.spec_hash()}"
        (directory / f"{stem}.csv").write_bytes(table.to_csv().encode())
        summary = {"kind": spec.kind, "spec_hash": spec.spec_hash(), "config": spec.to_config(),
                   "rows": len(table.rows), "summary": table.summary}
        (directory / f"{stem}.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    return table


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, McEstimate):
        return {"mean": v.mean, "se": v.se, "n": v.n}
    return str(v)
