"""Synthetic scenes and the three noise processes used in the experiments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage import measure

from .contour import Contour, circle
from .image_core import GrayImage, rasterize_even_odd, rasterize_interior

__all__ = [
    "NoiseSpec",
    "Disk",
    "Annulus",
    "make_donut",
    "make_blob_scene",
    "figure5_scene",
    "make_bone",
    "apply_noise",
    "make_rng",
]

NOISE_KINDS = ("gaussian_blur", "salt_pepper", "contour_perturb")


def make_rng(seed: int) -> np.random.Generator:
    """The single PRNG used repo-wide: PCG64 seeded with an unsigned 64-bit integer."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    blur_sigma: float = 15.0
    sp_density: float = 0.3
    perturb_sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind == "gaussian_blur" and not self.blur_sigma > 0:
            raise ValueError("blur_sigma must be > 0")
        if self.kind == "salt_pepper" and not 0.0 <= self.sp_density <= 1.0:
            raise ValueError("sp_density must lie in [0, 1]")
        if self.kind == "contour_perturb" and not self.perturb_sigma >= 0:
            raise ValueError("perturb_sigma must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float
    level: float


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, float]
    outer_radius: float
    inner_radius: float
    level: float


def _check_fits(center, radius, width, height, what="shape"):
    cx, cy = center
    if cx - radius < 0 or cy - radius < 0 or cx + radius > width - 1 or cy + radius > height - 1:
        raise ValueError(f"{what} of radius {radius} at {tuple(center)} exceeds the {width}x{height} image")


def make_donut(
    width: int = 256,
    height: int = 256,
    outer_radius: float = 70.0,
    inner_radius: float = 30.0,
    center=None,
    n: int = 200,
) -> tuple[GrayImage, list[Contour]]:
    """Binary annulus: 1 between the circles, 0 elsewhere.

    The image is the even-odd fill of the two returned ``n``-gons, so
    rasterising the returned contours reproduces the white region exactly.
    """
    center = (width / 2.0, height / 2.0) if center is None else tuple(map(float, center))
    if not 0 < inner_radius < outer_radius:
        raise ValueError(f"need 0 < inner_radius < outer_radius, got {inner_radius}, {outer_radius}")
    _check_fits(center, outer_radius, width, height, "annulus")
    outer = circle(center, outer_radius, n)
    inner = circle(center, inner_radius, n)
    mask = rasterize_even_odd([outer, inner], width, height).mask
    return GrayImage(mask.astype(float)), [outer, inner]


def make_blob_scene(
    spec: Sequence[Disk | Annulus],
    width: int = 256,
    height: int = 256,
    background: float = 0.0,
    n: int = 200,
) -> tuple[GrayImage, list[Contour]]:
    """Paint disks and annuli in order (later shapes overwrite earlier ones)."""
    if not 0.0 <= background <= 1.0:
        raise ValueError("background level must lie in [0, 1]")
    img = np.full((height, width), float(background))
    contours: list[Contour] = []
    for shape in spec:
        if not 0.0 <= shape.level <= 1.0:
            raise ValueError(f"shape level {shape.level} outside [0, 1]")
        if isinstance(shape, Annulus):
            if not 0 < shape.inner_radius < shape.outer_radius:
                raise ValueError("annulus needs 0 < inner_radius < outer_radius")
            _check_fits(shape.center, shape.outer_radius, width, height, "annulus")
            cs = [circle(shape.center, shape.outer_radius, n), circle(shape.center, shape.inner_radius, n)]
        elif isinstance(shape, Disk):
            if not shape.radius > 0:
                raise ValueError("disk radius must be > 0")
            _check_fits(shape.center, shape.radius, width, height, "disk")
            cs = [circle(shape.center, shape.radius, n)]
        else:
            raise TypeError(f"unsupported shape {shape!r}")
        img[rasterize_even_odd(cs, width, height).mask] = shape.level
        contours.extend(cs)
    return GrayImage(img), contours


# Dot levels chosen so that 1-D k-means with k in {3, 4} lumps the dim
# lower-right dot together with the background.
FIGURE5_DOT_LEVELS = (0.35, 0.6, 0.85, 0.08)


def figure5_scene(width: int = 256, height: int = 256, n: int = 200) -> tuple[GrayImage, list[Contour]]:
    """Annulus at 1.0 plus four small dots at distinct intermediate levels (6 true contours)."""
    sx, sy = width / 256.0, height / 256.0
    s = min(sx, sy)
    spec: list[Disk | Annulus] = [
        Annulus((128 * sx, 128 * sy), 70 * s, 30 * s, 1.0),
    ]
    corners = [(40, 40), (216, 40), (40, 216), (216, 216)]
    for (x, y), level in zip(corners, FIGURE5_DOT_LEVELS):
        spec.append(Disk((x * sx, y * sy), 12 * s, level))
    return make_blob_scene(spec, width, height, 0.0, n)


def make_bone(
    width: int = 128,
    height: int = 128,
    length: float = 70.0,
    shaft_halfwidth: float = 7.0,
    knob_radius: float = 11.0,
    angle: float = 0.0,
    n: int = 200,
) -> tuple[GrayImage, list[Contour]]:
    """Binary bone-like silhouette: a shaft with two lobed knobs at each end."""
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    ca, sa = np.cos(angle), np.sin(angle)
    u = (xx - cx) * ca + (yy - cy) * sa
    v = -(xx - cx) * sa + (yy - cy) * ca
    half = length / 2.0
    mask = (np.abs(u) <= half) & (np.abs(v) <= shaft_halfwidth)
    off = knob_radius * 0.8
    for eu in (-half, half):
        for ev in (-off, off):
            mask |= (u - eu) ** 2 + (v - ev) ** 2 <= knob_radius**2
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise ValueError("bone exceeds the image bounds")
    padded = np.pad(mask.astype(float), 1)
    loops = measure.find_contours(padded, 0.5)
    loop = max(loops, key=len)[:-1] - 1.0
    c = Contour(loop[:, ::-1]).resample(n)
    # regenerate from the polygon so the image and truth agree exactly
    region = rasterize_interior(c, width, height)
    return GrayImage(region.mask.astype(float)), [c]


def apply_noise(
    img: GrayImage, contours: Sequence[Contour], spec: NoiseSpec
) -> tuple[GrayImage, list[Contour]]:
    """Apply one noise process; see :class:`NoiseSpec` for the parameters consulted."""
    contours = list(contours)
    if spec.kind == "gaussian_blur":
        radius = int(np.ceil(3.0 * spec.blur_sigma))
        out = ndimage.gaussian_filter(img.values, spec.blur_sigma, mode="nearest", radius=radius)
        return GrayImage(np.clip(out, 0.0, 1.0)), contours
    if spec.kind == "salt_pepper":
        rng = make_rng(spec.seed)
        vals = np.array(img.values)
        flat = vals.reshape(-1)
        k = int(round(spec.sp_density * flat.size))
        if k:
            idx = rng.choice(flat.size, size=k, replace=False)
            flat[idx] = rng.integers(0, 2, size=k).astype(float)
        return GrayImage(vals), contours
    # contour_perturb
    if spec.perturb_sigma == 0:
        return GrayImage(img.values), contours
    rng = make_rng(spec.seed)
    moved = []
    for c in contours:
        pts = c.points + rng.normal(0.0, spec.perturb_sigma, size=c.points.shape)
        moved.append(Contour(pts))
    mask = rasterize_even_odd(moved, img.width, img.height, check_simple=False).mask
    return GrayImage(mask.astype(float)), moved
