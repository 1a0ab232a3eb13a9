"""Experiment configuration: a versioned JSON document, strict about keys."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .branching_law import ConfigurationError, OffspringLaw
from .levy_models import LevyModel

SCHEMA_VERSION = 1
MIN_COUNT = 100

KINDS = (
    "law", "model", "scale", "exit", "renewal", "cond", "sim", "survival", "mt-tail", "alltime",
    "yaglom", "fk", "constants", "predict",
)
# regime-tagged aliases; the run checks the model actually has that mean
REGIME_KINDS = {
    "survival_zero_mean": ("survival", "zero_mean"),
    "survival_positive_mean": ("survival", "positive_mean"),
    "survival_negative_mean": ("survival", "negative_mean"),
    "mt_tail_zero_mean": ("mt-tail", "zero_mean"),
    "mt_tail_positive_mean": ("mt-tail", "positive_mean"),
    "mt_tail_negative_mean": ("mt-tail", "negative_mean"),
}

_TOP_KEYS = {"schema_version", "kind", "model", "law", "x", "t", "y", "z", "q", "n", "seed", "dt",
             "horizon", "out", "options"}
_NEEDS_LAW = {"law", "sim", "survival", "mt-tail", "alltime", "yaglom", "fk", "constants", "predict"}


def _grid(cfg: dict, key: str) -> tuple[float, ...]:
    raw = cfg.get(key, [])
    vals = [raw] if isinstance(raw, (int, float)) else list(raw)
    out = tuple(float(v) for v in vals)
    if any(not math.isfinite(v) for v in out):
        raise ConfigurationError(f"grid {key!r} has non-finite entries")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigurationError(f"grid {key!r} must be strictly ascending, got {list(out)}")
    return out


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    model: LevyModel
    law: OffspringLaw | None = None
    x: tuple[float, ...] = ()
    t: tuple[float, ...] = ()
    y: tuple[float, ...] = ()
    z: tuple[float, ...] = ()
    q: tuple[float, ...] = ()
    n: int = 10_000
    seed: int = 0
    dt: float | None = None
    horizon: float | None = None
    out: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        base = REGIME_KINDS.get(self.kind, (self.kind, None))[0]
        if base not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        if base in _NEEDS_LAW and self.law is None:
            raise ConfigurationError(f"kind {self.kind!r} needs an offspring law")
        if self.n < MIN_COUNT:
            raise ConfigurationError(f"replicate count n={self.n} is below {MIN_COUNT}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be nonnegative, got {self.seed}")
        for key in ("x", "t", "y", "z", "q"):
            vals = getattr(self, key)
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigurationError(f"grid {key!r} must be strictly ascending")

    @property
    def base_kind(self) -> str:
        return REGIME_KINDS.get(self.kind, (self.kind, None))[0]

    @property
    def required_regime(self) -> str | None:
        return REGIME_KINDS.get(self.kind, (self.kind, None))[1]

    def to_config(self) -> dict:
        cfg: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "kind": self.kind,
                               "model": self.model.to_config(), "n": self.n, "seed": self.seed}
        if self.law is not None:
            cfg["law"] = self.law.to_config()
        for key in ("x", "t", "y", "z", "q"):
            if getattr(self, key):
                cfg[key] = list(getattr(self, key))
        if self.dt is not None:
            cfg["dt"] = self.dt
        if self.horizon is not None:
            cfg["horizon"] = self.horizon
        if self.options:
            cfg["options"] = dict(self.options)
        return cfg

    def spec_hash(self) -> str:
        """Digest of everything that affects the numbers (not ``out``)."""
        text = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentSpec":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def spec_from_dict(cfg: dict, kind: str | None = None) -> ExperimentSpec:
    if not isinstance(cfg, dict):
        raise ConfigurationError("configuration must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    kind = kind or cfg.get("kind")
    if kind is None:
        raise ConfigurationError("no experiment kind given")
    try:
        model = LevyModel.from_config(cfg.get("model", {"drift": 0.0, "gaussian_var": 1.0}))
        law = OffspringLaw.from_config(cfg["law"]) if "law" in cfg else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    options = cfg.get("options", {})
    if not isinstance(options, dict):
        raise ConfigurationError("options must be an object")
    return ExperimentSpec(
        kind=kind, model=model, law=law,
        x=_grid(cfg, "x"), t=_grid(cfg, "t"), y=_grid(cfg, "y"), z=_grid(cfg, "z"), q=_grid(cfg, "q"),
        n=int(cfg.get("n", 10_000)), seed=int(cfg.get("seed", 0)),
        dt=None if cfg.get("dt") is None else float(cfg["dt"]),
        horizon=None if cfg.get("horizon") is None else float(cfg["horizon"]),
        out=cfg.get("out"), options=options,
    )


def load_spec(path: str | Path, kind: str | None = None) -> ExperimentSpec:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return spec_from_dict(cfg, kind)
