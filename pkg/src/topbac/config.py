"""Flat ``key = value`` run configuration with validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .active_contour import EnergyWeights
from .density import KINDS
from .pipeline import SELECTION_RULES

__all__ = ["RunConfig", "ConfigError", "parse_config_text", "load_config"]


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


def _opt_int(s):
    return None if str(s).strip().lower() in ("", "none", "all") else int(s)


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none") else float(s)


@dataclass(frozen=True)
class RunConfig:
    sigma1: float = 3.0
    sigma2: float = 5.0
    T: float = 5.0
    truncate: float = 3.0
    lambda1: float = 0.15
    lambda2: float = 0.3
    lambda3: float = 0.0
    eps: float = 0.3
    bandwidth: float = 0.05
    kind: str = "gaussian_kde"
    n: int = 200
    tol: float = 1e-7
    max_iter: int = 500
    seed: int = 0
    k: int | None = None
    selection: str = "area"
    min_area: float | None = None
    center_radius: float | None = None
    keep_most_circular: int | None = None

    def __post_init__(self):
        try:
            EnergyWeights(self.lambda1, self.lambda2, self.lambda3, self.eps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("sigma1", "sigma2", "bandwidth", "tol", "truncate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v}")
        if not (math.isfinite(self.T) and self.T >= 0):
            raise ConfigError(f"T must be >= 0, got {self.T}")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.selection not in SELECTION_RULES:
            raise ConfigError(f"selection must be one of {SELECTION_RULES}, got {self.selection!r}")
        if self.n < 8:
            raise ConfigError("n must be >= 8")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.keep_most_circular is not None and self.keep_most_circular < 1:
            raise ConfigError("keep_most_circular must be >= 1")
        for name in ("min_area", "center_radius"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def weights(self) -> EnergyWeights:
        return EnergyWeights(self.lambda1, self.lambda2, self.lambda3, self.eps)

    @property
    def filters(self) -> dict:
        f = {"min_area": self.min_area, "center_radius": self.center_radius,
             "keep_most_circular": self.keep_most_circular}
        return {k: v for k, v in f.items() if v is not None}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in self.to_dict().items())

    def updated(self, values: dict) -> RunConfig:
        unknown = set(values) - set(KEYS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        d = self.to_dict()
        for key, raw in values.items():
            d[key] = _coerce(key, raw)
        return RunConfig(**d)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        return cls().updated(d)


_PARSERS = {
    "k": _opt_int,
    "keep_most_circular": _opt_int,
    "min_area": _opt_float,
    "center_radius": _opt_float,
}
KEYS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw):
    if raw is None:
        if key in _PARSERS:
            return None
        raise ConfigError(f"{key} cannot be empty")
    if key in _PARSERS:
        conv = _PARSERS[key]
    else:
        conv = type(KEYS[key].default)
    try:
        if conv is int and isinstance(raw, str):
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        return conv(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {raw!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (flags win)."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{p}: config file not found")
        cfg = cfg.updated(parse_config_text(p.read_text()))
    if overrides:
        cfg = cfg.updated(overrides)
    return cfg
