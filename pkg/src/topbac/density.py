"""Pixel-value densities and the joint position/value kernel density."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ValueDensity",
    "FeaturePoint",
    "fit_value_density",
    "log_ratio",
    "feature_density",
    "DENSITY_FLOOR",
    "GRID_SIZE",
]

DENSITY_FLOOR = 1e-10
GRID_SIZE = 512
KINDS = ("gaussian_kde", "histogram")


@dataclass(frozen=True, eq=False)
class ValueDensity:
    """Density of grayscale values tabulated on a uniform grid over [0, 1].

    Queries between grid points interpolate linearly; the log is taken
    after flooring at ``DENSITY_FLOOR``.
    """

    bandwidth: float
    grid: np.ndarray
    density: np.ndarray
    kind: str

    def __post_init__(self):
        for name in ("grid", "density"):
            a = np.array(getattr(self, name), dtype=float, copy=True)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def log_density(self) -> np.ndarray:
        return np.log(np.maximum(self.density, DENSITY_FLOOR))

    def pdf(self, v) -> np.ndarray:
        return np.interp(np.clip(v, 0.0, 1.0), self.grid, self.density)

    def logpdf(self, v) -> np.ndarray:
        return np.log(np.maximum(self.pdf(v), DENSITY_FLOOR))

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bandwidth": self.bandwidth,
            "grid": self.grid.tolist(),
            "density": self.density.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ValueDensity:
        return cls(float(d["bandwidth"]), np.asarray(d["grid"]), np.asarray(d["density"]), d["kind"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> ValueDensity:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _kde(samples: np.ndarray, bandwidth: float, grid: np.ndarray) -> np.ndarray:
    # images carry few distinct values, so weight unique values by their counts
    vals, counts = np.unique(samples, return_counts=True)
    out = np.zeros_like(grid)
    chunk = max(1, 2_000_000 // len(grid))
    for s in range(0, len(vals), chunk):
        z = (grid[:, None] - vals[None, s : s + chunk]) / bandwidth
        out += np.exp(-0.5 * z * z) @ counts[s : s + chunk]
    return out / (len(samples) * bandwidth * np.sqrt(2.0 * np.pi))


def _histogram(samples: np.ndarray, bandwidth: float, grid: np.ndarray) -> np.ndarray:
    nbins = max(1, int(round(1.0 / bandwidth)))
    counts, edges = np.histogram(samples, bins=nbins, range=(0.0, 1.0))
    idx = np.clip(np.searchsorted(edges, grid, side="right") - 1, 0, nbins - 1)
    return counts[idx] / (len(samples) * (1.0 / nbins))


def fit_value_density(samples: Sequence[float], bandwidth: float = 0.05, kind: str = "gaussian_kde") -> ValueDensity:
    """Fit a density to grayscale samples.

    Parameters
    ----------
    samples : array_like
        Values in [0, 1].
    bandwidth : float
        Kernel standard deviation, or the bin width for ``kind='histogram'``
        (the bin count is ``round(1 / bandwidth)``).
    kind : {'gaussian_kde', 'histogram'}

    Returns
    -------
    ValueDensity
        Tabulated on 512 grid points and renormalised to integrate to one
        over [0, 1] by the trapezoid rule.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a density to an empty sample")
    if kind not in KINDS:
        raise ValueError(f"unknown estimator {kind!r}; expected one of {KINDS}")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be > 0")
    x = np.clip(x, 0.0, 1.0)
    grid = np.linspace(0.0, 1.0, GRID_SIZE)
    dens = _kde(x, bandwidth, grid) if kind == "gaussian_kde" else _histogram(x, bandwidth, grid)
    dens = dens / np.trapezoid(dens, grid)
    return ValueDensity(float(bandwidth), grid, dens, kind)


def log_ratio(d_int: ValueDensity, d_ext: ValueDensity, v):
    """``log p_int(v) - log p_ext(v)`` with both densities floored before the log."""
    r = d_int.logpdf(v) - d_ext.logpdf(v)
    return float(r) if np.ndim(r) == 0 else r


@dataclass(frozen=True)
class FeaturePoint:
    x: float
    y: float
    value: float

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def _as_features(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        arr = np.array([(p.x, p.y, p.value) for p in points], dtype=float).reshape(-1, 3)
    return arr


def feature_density(points, query, sigma1: float, sigma2: float) -> float:
    """Unnormalised product-Gaussian kernel sum at ``query``.

    ``points`` is a sequence of :class:`FeaturePoint` or an ``(n, 3)`` array
    of ``(x, y, value)`` rows.
    """
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("sigma1 and sigma2 must be > 0")
    pts = _as_features(points)
    if len(pts) == 0:
        raise ValueError("feature_density needs at least one point")
    q = np.asarray(_as_features([query])[0] if isinstance(query, FeaturePoint) else query, dtype=float)
    d2 = (pts[:, 0] - q[0]) ** 2 + (pts[:, 1] - q[1]) ** 2
    dv = pts[:, 2] - q[2]
    return float(np.sum(np.exp(-d2 / (2 * sigma1**2) - dv * dv / (2 * sigma2**2))))
