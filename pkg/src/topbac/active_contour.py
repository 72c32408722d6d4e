"""Energy of a closed contour on an image and its gradient-descent evolution."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .contour import Contour, segment_intersections
from .density import ValueDensity
from .image_core import GrayImage, rasterize_interior
from .shape_elastic import ShapePrior, prior_energy, prior_update_direction

__all__ = [
    "EnergyWeights",
    "EvolutionState",
    "energy_image",
    "energy_smooth",
    "energy_smooth_gradient",
    "smooth_force",
    "image_force",
    "sample_image",
    "total_energy",
    "evolve",
    "MIN_AREA",
]

MIN_AREA = 4.0
INTERSECTION_CHECK_EVERY = 10


@dataclass(frozen=True)
class EnergyWeights:
    """Weights of the image, smoothness and prior terms, and the prior step ``eps``."""

    lambda1: float = 0.15
    lambda2: float = 0.3
    lambda3: float = 0.0
    eps: float = 0.3

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if any(not np.isfinite(v) or v < 0 for v in lams):
            raise ValueError(f"energy weights must be nonnegative, got {lams}")
        if max(lams) <= 0:
            raise ValueError("at least one of lambda1, lambda2, lambda3 must be > 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


@dataclass
class EvolutionState:
    """Result of :func:`evolve`.

    ``energies`` has ``iteration + 1`` entries (the initial energy first).
    ``stop_reason`` is one of ``'tolerance'``, ``'max_iter'``, ``'degenerate'``.
    """

    contour: Contour
    iteration: int = 0
    energies: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = "max_iter"
    self_intersecting: bool = False
    snapshots: list = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return self.stop_reason == "degenerate"

    def to_dict(self, *, include_snapshots: bool = False) -> dict:
        d = {
            "iteration": self.iteration,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "self_intersecting": self.self_intersecting,
            "energies": [float(e) for e in self.energies],
            "contour": self.contour.points.tolist(),
        }
        if include_snapshots:
            d["snapshots"] = [{"iteration": i, "contour": p.tolist()} for i, p in self.snapshots]
        return d

    def save_trace(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_snapshots=True)))


# -- energies -------------------------------------------------------------------

def _log_maps(img: GrayImage, d_int: ValueDensity, d_ext: ValueDensity):
    return d_int.logpdf(img.values), d_ext.logpdf(img.values)


def _image_energy_from_maps(mask: np.ndarray, l_int: np.ndarray, l_ext: np.ndarray) -> float:
    return float(-np.sum(l_ext) - np.sum((l_int - l_ext)[mask]))


def energy_image(
    img: GrayImage, c: Contour, d_int: ValueDensity, d_ext: ValueDensity, *, check_simple: bool = True
) -> float:
    """``-sum_int log p_int(f) - sum_ext log p_ext(f)`` over rasterised pixels."""
    mask = rasterize_interior(c, img.width, img.height, check_simple=check_simple).mask
    return _image_energy_from_maps(mask, *_log_maps(img, d_int, d_ext))


def energy_smooth(c: Contour) -> float:
    """``sum_i |c_{i+1} - c_i|^2 / dt`` with ``dt = 1/N``."""
    d = np.roll(c.points, -1, axis=0) - c.points
    return float(c.n * np.sum(d * d))


def smooth_force(c: Contour) -> np.ndarray:
    """``kappa n``: signed Menger curvature times the outward normal at each point."""
    return c.curvature()[:, None] * c.outward_normals()


def energy_smooth_gradient(c: Contour) -> np.ndarray:
    """Gradient of :func:`energy_smooth` in the vertex positions, via curvature.

    For a uniformly sampled curve of length ``L`` the discrete gradient
    ``2N (2 c_i - c_{i-1} - c_{i+1})`` equals ``(2 L^2 / N) kappa n`` to
    second order, so this is :func:`smooth_force` rescaled; the evolution
    itself uses the unscaled ``kappa n``.
    """
    return (2.0 * c.length**2 / c.n) * smooth_force(c)


def sample_image(img: GrayImage, points: np.ndarray) -> np.ndarray:
    """Bilinear image values at ``(x, y)`` points (clamped at the border)."""
    return ndimage.map_coordinates(img.values, [points[:, 1], points[:, 0]], order=1, mode="nearest")


def image_force(img: GrayImage, c: Contour, d_int: ValueDensity, d_ext: ValueDensity) -> np.ndarray:
    """``log(p_int / p_ext)(f(u)) n``, the negative image gradient: points move outward where the interior is likelier."""
    f = sample_image(img, c.points)
    lr = d_int.logpdf(f) - d_ext.logpdf(f)
    return lr[:, None] * c.outward_normals()


def total_energy(
    img: GrayImage,
    c: Contour,
    d_int: ValueDensity | None,
    d_ext: ValueDensity | None,
    prior: ShapePrior | None,
    weights: EnergyWeights,
    *,
    check_simple: bool = True,
) -> float:
    """``lambda1 E_image + lambda2 E_smooth + lambda3 E_prior`` (zero-weight terms skipped)."""
    e = 0.0
    if weights.lambda1 > 0:
        e += weights.lambda1 * energy_image(img, c, d_int, d_ext, check_simple=check_simple)
    if weights.lambda2 > 0:
        e += weights.lambda2 * energy_smooth(c)
    if weights.lambda3 > 0:
        if prior is None:
            raise ValueError("a shape prior is required when lambda3 > 0")
        e += weights.lambda3 * prior_energy(prior, c)
    return e


# -- evolution -------------------------------------------------------------------

def _clean(points: np.ndarray) -> np.ndarray | None:
    keep = np.any(np.roll(points, -1, axis=0) != points, axis=1)
    pts = points[keep]
    return pts if len(pts) >= 3 else None


def _fit_to_image(points: np.ndarray, n: int, w: int, h: int) -> Contour | None:
    # clip before resampling: clipping can stack points on the border, and
    # interpolating between in-bounds points stays in bounds
    p = np.column_stack([np.clip(points[:, 0], 0, w - 1), np.clip(points[:, 1], 0, h - 1)])
    p = _clean(p)
    if p is None:
        return None
    try:
        return Contour(p, orient=False).resample(n)
    except ValueError:
        return None


def evolve(
    img: GrayImage,
    init: Contour,
    d_int: ValueDensity | None,
    d_ext: ValueDensity | None,
    prior: ShapePrior | None = None,
    weights: EnergyWeights = EnergyWeights(),
    tol: float = 1e-7,
    max_iter: int = 500,
    *,
    n: int | None = None,
    snapshot_every: int = 0,
) -> EvolutionState:
    """Gradient descent on the total energy from ``init``.

    Each iteration moves every point by
    ``lambda1 log(p_int/p_ext) n - lambda2 kappa n - lambda3 prior_direction``,
    clips to the image, resamples to ``n`` points by arc length and
    re-evaluates the energy. Iteration stops when the relative energy change
    falls below ``tol``, after ``max_iter`` iterations, or when the enclosed
    area drops below 4 pixels (``'degenerate'``). Self-intersections are
    checked every 10 iterations and only flagged.
    """
    if weights.lambda1 > 0 and (d_int is None or d_ext is None):
        raise ValueError("pixel densities are required when lambda1 > 0")
    if weights.lambda3 > 0 and prior is None:
        raise ValueError("a shape prior is required when lambda3 > 0")
    if not init.is_simple():
        raise ValueError(f"initial contour self-intersects at segments {init.self_intersections()[:5]}")
    w, h = img.width, img.height
    n = init.n if n is None else int(n)
    c = _fit_to_image(init.points, n, w, h)
    if c is None:
        raise ValueError("initial contour collapses when clipped to the image")
    maps = _log_maps(img, d_int, d_ext) if weights.lambda1 > 0 else None

    def energy(cur: Contour) -> float:
        e = 0.0
        if maps is not None:
            mask = rasterize_interior(cur, w, h, check_simple=False).mask
            e += weights.lambda1 * _image_energy_from_maps(mask, *maps)
        if weights.lambda2 > 0:
            e += weights.lambda2 * energy_smooth(cur)
        if weights.lambda3 > 0:
            e += weights.lambda3 * prior_energy(prior, cur)
        return e

    state = EvolutionState(c, energies=[energy(c)])
    if snapshot_every:
        state.snapshots.append((0, c.points))
    if c.area < MIN_AREA:
        state.stop_reason = "degenerate"
        return state
    for it in range(1, max_iter + 1):
        move = np.zeros_like(c.points)
        if weights.lambda1 > 0:
            f = sample_image(img, c.points)
            lr = d_int.logpdf(f) - d_ext.logpdf(f)
            move += weights.lambda1 * lr[:, None] * c.outward_normals()
        if weights.lambda2 > 0:
            move -= weights.lambda2 * smooth_force(c)
        if weights.lambda3 > 0:
            move -= weights.lambda3 * prior_update_direction(prior, c, weights.eps).direction
        nxt = _fit_to_image(c.points + move, n, w, h)
        state.iteration = it
        if nxt is None or nxt.signed_area < MIN_AREA:
            state.energies.append(state.energies[-1])
            state.stop_reason = "degenerate"
            return state
        c = nxt
        state.contour = c
        e = energy(c)
        prev = state.energies[-1]
        state.energies.append(e)
        if snapshot_every and it % snapshot_every == 0:
            state.snapshots.append((it, c.points))
        if it % INTERSECTION_CHECK_EVERY == 0 and segment_intersections(c.points):
            state.self_intersecting = True
        if abs(e - prev) <= tol * max(abs(prev), 1e-300):
            state.converged = True
            state.stop_reason = "tolerance"
            break
    else:
        state.stop_reason = "max_iter"
    if not state.self_intersecting and segment_intersections(c.points):
        state.self_intersecting = True
    return state
