"""TOP initialisation followed by active-contour refinement, plus baselines and helpers."""

from __future__ import annotations

import json
import os
import re
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage
from sklearn.cluster import KMeans

from .active_contour import EnergyWeights, EvolutionState, evolve
from .contour import Contour, circle, read_contour_csv
from .density import ValueDensity, fit_value_density
from .image_core import GrayImage, load_image, rasterize_even_odd, rasterize_interior
from .shape_elastic import ShapePrior, elastic_distance, fit_prior
from .topo_segment import extract_contours, segment

__all__ = [
    "TrainingSet",
    "load_training_dir",
    "estimate_pixel_densities",
    "empirical_densities",
    "SegmentationResult",
    "TopInitError",
    "TopInitWarning",
    "top_bac",
    "bac",
    "select_contours",
    "filter_contours",
    "kmeans_baseline",
    "render_overlay",
    "SELECTION_RULES",
]

SELECTION_RULES = ("area", "extremes")
INIT_MAX_CONTOURS = 20
INIT_MIN_AREA_FRACTION = 0.05
EXTERIOR_BAND = 10
INTERIOR_RING = 2
IMAGE_SUFFIXES = (".png", ".pgm", ".pnm")


class TopInitError(RuntimeError):
    """TOP produced no closed contour to start from."""


class TopInitWarning(UserWarning):
    """TOP output looks unusable as an initialisation (noise-dominated)."""


# -- training data ------------------------------------------------------------------

@dataclass
class TrainingSet:
    images: list[GrayImage]
    truths: list[list[Contour]]

    def __post_init__(self):
        if len(self.images) != len(self.truths):
            raise ValueError(f"{len(self.images)} images but {len(self.truths)} ground-truth lists")
        for i, cs in enumerate(self.truths):
            for c in cs:
                if not c.is_simple():
                    raise ValueError(f"ground-truth contour of image {i} self-intersects")

    def __len__(self) -> int:
        return len(self.images)

    def contours(self) -> list[Contour]:
        return [c for cs in self.truths for c in cs]


def _gt_index(path: Path, stem: str) -> int | None:
    m = re.fullmatch(re.escape(stem) + r"_gt(\d+)", path.stem)
    return int(m.group(1)) if m else None


def ground_truth_files(image_path) -> list[Path]:
    """Sidecar contour files ``<stem>_gt<j>.csv`` next to an image, ordered by ``j``."""
    p = Path(image_path)
    found = []
    for q in p.parent.glob(f"{p.stem}_gt*.csv"):
        j = _gt_index(q, p.stem)
        if j is not None:
            found.append((j, q))
    return [q for _, q in sorted(found)]


def load_training_dir(path) -> TrainingSet:
    """Every image in ``path`` that has at least one ``<image>_gt<j>.csv`` sidecar."""
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: training directory does not exist")
    images, truths = [], []
    for p in sorted(d.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        gts = ground_truth_files(p)
        if not gts:
            continue
        images.append(load_image(p))
        truths.append([read_contour_csv(q) for q in gts])
    if not images:
        raise ValueError(f"{d}: no images with _gt<j>.csv sidecars")
    return TrainingSet(images, truths)


def estimate_pixel_densities(
    train: TrainingSet, bandwidth: float = 0.05, kind: str = "gaussian_kde"
) -> tuple[ValueDensity, ValueDensity]:
    """One interior/exterior density pair pooled over the whole training set.

    The interior of an image is the even-odd fill of its ground-truth
    contours; the exterior is the complement.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    ins, outs = [], []
    for img, cs in zip(train.images, train.truths):
        mask = rasterize_even_odd(cs, img.width, img.height).mask
        ins.append(img.values[mask])
        outs.append(img.values[~mask])
    inside, outside = np.concatenate(ins), np.concatenate(outs)
    if inside.size == 0:
        raise ValueError("ground truth encloses no pixels; interior density undefined")
    if outside.size == 0:
        raise ValueError("ground truth covers every pixel; exterior density undefined")
    return fit_value_density(inside, bandwidth, kind), fit_value_density(outside, bandwidth, kind)


def _inner_ring(inside: np.ndarray) -> np.ndarray:
    ring = inside & ~ndimage.binary_erosion(inside, iterations=INTERIOR_RING)
    return ring if ring.any() else inside


def empirical_densities(
    img: GrayImage,
    c: Contour,
    labels: np.ndarray | None = None,
    bandwidth: float = 0.05,
    kind: str = "gaussian_kde",
) -> tuple[ValueDensity, ValueDensity]:
    """Densities for one contour estimated from the image itself.

    Interior samples are the pixels inside ``c`` that belong to the cluster
    lining its inner edge (the majority label in a thin ring just inside
    the contour), or every enclosed pixel when ``labels`` is absent.
    Exterior samples come from a 10-pixel band just outside ``c``.
    """
    inside = rasterize_interior(c, img.width, img.height, check_simple=False).mask
    if not inside.any():
        raise ValueError("contour encloses no pixels")
    sel = inside
    if labels is not None:
        lab = np.asarray(labels)
        major = np.bincount(lab[_inner_ring(inside)].ravel()).argmax()
        sel = inside & (lab == major)
    band = ndimage.binary_dilation(inside, iterations=EXTERIOR_BAND) & ~inside
    if not band.any():
        band = ~inside
    if not band.any():
        raise ValueError("contour covers the whole image; exterior density undefined")
    return fit_value_density(img.values[sel], bandwidth, kind), fit_value_density(img.values[band], bandwidth, kind)


def _oriented(img: GrayImage, c: Contour, d_int: ValueDensity, d_ext: ValueDensity):
    # a hole contour sees object pixels outside and background inside: swap the pair
    inside = rasterize_interior(c, img.width, img.height, check_simple=False).mask
    ring = _inner_ring(inside)
    if not ring.any():
        return d_int, d_ext
    v = img.values[ring]
    if np.mean(d_int.logpdf(v) - d_ext.logpdf(v)) < 0:
        return d_ext, d_int
    return d_int, d_ext


# -- results ---------------------------------------------------------------------------

@dataclass
class SegmentationResult:
    """Initial and final contours with the parameters that produced them.

    ``timing`` (seconds per stage) is kept out of :meth:`to_dict` so that the
    serialised result is identical across reruns; use :meth:`save_timing`.
    """

    initial: list[Contour]
    states: list[EvolutionState]
    params: dict
    timing: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    n_candidates: int = 0

    def __post_init__(self):
        if len(self.initial) != len(self.states):
            raise ValueError("initial contours and final states are not aligned")

    @property
    def final(self) -> list[Contour]:
        return [s.contour for s in self.states]

    @property
    def iterations(self) -> list[int]:
        return [s.iteration for s in self.states]

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations))

    @property
    def degenerate(self) -> bool:
        return any(s.degenerate for s in self.states)

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "n_candidates": self.n_candidates,
            "warnings": list(self.warnings),
            "total_iterations": self.total_iterations,
            "contours": [
                {"initial": c.points.tolist(), **s.to_dict()} for c, s in zip(self.initial, self.states)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save_json(self, path) -> None:
        Path(path).write_text(self.to_json())

    def save_timing(self, path) -> None:
        Path(path).write_text(json.dumps(self.timing, indent=1))


# -- selection and filtering -----------------------------------------------------------

def select_contours(contours: Sequence[Contour], k: int | None, rule: str = "area") -> list[Contour]:
    """Pick ``k`` contours: the largest by area, or for ``'extremes'`` the largest and smallest alternately."""
    if rule not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {rule!r}; expected one of {SELECTION_RULES}")
    order = sorted(contours, key=lambda c: -c.area)
    if k is None:
        return order
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(order):
        warnings.warn(f"asked for {k} contours but only {len(order)} are available; keeping all", stacklevel=3)
        return order
    if rule == "area":
        return order[:k]
    n_big = (k + 1) // 2
    return order[:n_big] + (order[len(order) - (k - n_big):] if k - n_big else [])


def filter_contours(
    contours: Sequence[Contour],
    min_area: float | None = None,
    center_radius: float | None = None,
    keep_most_circular: int | None = None,
    *,
    image_size: tuple[int, int] | None = None,
) -> list[Contour]:
    """Drop implausible contours, in order: small area, off-centre, least circular.

    Parameters
    ----------
    min_area : float, optional
        Keep contours enclosing at least this many square pixels.
    center_radius : float, optional
        Keep contours whose centroid lies within this distance of the image
        centre; needs ``image_size=(width, height)``.
    keep_most_circular : int, optional
        Keep this many contours with the smallest elastic distance to a
        circle (size does not matter), preserving input order.
    """
    out = list(contours)
    if min_area is not None:
        out = [c for c in out if c.area >= min_area]
    if center_radius is not None:
        if image_size is None:
            raise ValueError("center_radius needs image_size")
        mid = np.array([(image_size[0] - 1) / 2.0, (image_size[1] - 1) / 2.0])
        out = [c for c in out if np.linalg.norm(c.centroid - mid) <= center_radius]
    if keep_most_circular is not None and len(out) > keep_most_circular:
        ref = circle((0.0, 0.0), 1.0, 200)
        d = [elastic_distance(ref, c) for c in out]
        keep = set(np.argsort(d, kind="stable")[:keep_most_circular].tolist())
        out = [c for i, c in enumerate(out) if i in keep]
    return out


# -- evolution drivers ------------------------------------------------------------------

def _threads(n_jobs: int) -> int:
    env = os.environ.get("TOPBAC_THREADS")
    if env:
        try:
            t = int(env)
        except ValueError:
            raise ValueError(f"TOPBAC_THREADS must be an integer, got {env!r}") from None
        return max(1, t)
    return max(1, min(n_jobs, os.cpu_count() or 1))


def _evolve_all(img, inits, pairs, prior, weights, tol, max_iter, n) -> list[EvolutionState]:
    def run(i):
        d_int, d_ext = pairs[i]
        return evolve(img, inits[i], d_int, d_ext, prior, weights, tol, max_iter, n=n)

    idx = range(len(inits))
    workers = _threads(len(inits))
    if workers == 1 or len(inits) <= 1:
        return [run(i) for i in idx]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(run, idx))


def _prior_from(train: TrainingSet | None, prior: ShapePrior | None, weights: EnergyWeights, n: int):
    if weights.lambda3 <= 0:
        return None
    if prior is not None:
        return prior
    if train is None:
        raise ValueError("lambda3 > 0 needs a shape prior or a training set to fit one")
    return fit_prior(train.contours(), n=n)


def top_bac(
    img: GrayImage,
    train: TrainingSet | None = None,
    sigma1: float = 3.0,
    sigma2: float = 5.0,
    T: float = 5.0,
    weights: EnergyWeights = EnergyWeights(),
    k: int | None = None,
    selection: str = "area",
    *,
    bandwidth: float = 0.05,
    kind: str = "gaussian_kde",
    tol: float = 1e-7,
    max_iter: int = 500,
    n: int = 200,
    prior: ShapePrior | None = None,
    truncate: float | None = 3.0,
    filters: dict | None = None,
    strict_init: bool = False,
) -> SegmentationResult:
    """Segment with TOP, then refine each selected contour by active-contour descent.

    With a training set one pooled density pair drives every contour
    (swapped for contours whose inside looks like background, such as the
    hole of a ring). Without one, each contour gets densities estimated from
    the TOP labelling around it (see :func:`empirical_densities`).

    Raises
    ------
    TopInitError
        If TOP yields no closed contour, or with ``strict_init`` when the
        initialisation is flagged as unusable.

    Warns
    -----
    TopInitWarning
        If TOP yields more than 20 contours or none enclosing 5% of the image.
    """
    if selection not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {selection!r}; expected one of {SELECTION_RULES}")
    timing = {}
    t0 = time.perf_counter()
    labels, _, _ = segment(img, sigma1, sigma2, T, truncate=truncate)
    candidates = extract_contours(labels, n=n)
    timing["top"] = time.perf_counter() - t0
    notes = []
    if not candidates:
        raise TopInitError(
            f"TOP found no closed contour at sigma1={sigma1}, sigma2={sigma2}, T={T}; "
            "try a larger T or bandwidths"
        )
    biggest = max(c.area for c in candidates)
    if len(candidates) > INIT_MAX_CONTOURS or biggest < INIT_MIN_AREA_FRACTION * img.width * img.height:
        msg = (
            f"TOP initialisation looks unusable: {len(candidates)} contours, largest encloses "
            f"{biggest / (img.width * img.height):.1%} of the image; boundaries cannot be "
            "identified (heavy noise?)"
        )
        if strict_init:
            raise TopInitError(msg)
        warnings.warn(msg, TopInitWarning, stacklevel=2)
        notes.append(msg)
    chosen = candidates
    if filters:
        chosen = filter_contours(chosen, image_size=(img.width, img.height), **filters)
    if k is not None and k > len(chosen):
        notes.append(f"asked for {k} contours but only {len(chosen)} are available")
    chosen = select_contours(chosen, k, selection)

    t0 = time.perf_counter()
    if weights.lambda1 > 0:
        if train is not None:
            d_int, d_ext = estimate_pixel_densities(train, bandwidth, kind)
            pairs = [_oriented(img, c, d_int, d_ext) for c in chosen]
        else:
            pairs = [empirical_densities(img, c, labels, bandwidth, kind) for c in chosen]
    else:
        pairs = [(None, None)] * len(chosen)
    pri = _prior_from(train, prior, weights, n)
    timing["densities"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    states = _evolve_all(img, chosen, pairs, pri, weights, tol, max_iter, n)
    timing["evolution"] = time.perf_counter() - t0
    params = {
        "method": "topbac",
        "sigma1": sigma1,
        "sigma2": sigma2,
        "T": T,
        "lambda1": weights.lambda1,
        "lambda2": weights.lambda2,
        "lambda3": weights.lambda3,
        "eps": weights.eps,
        "bandwidth": bandwidth,
        "kind": kind,
        "tol": tol,
        "max_iter": max_iter,
        "n": n,
        "k": k,
        "selection": selection,
        "densities": "training" if train is not None else "empirical",
    }
    return SegmentationResult(chosen, states, params, timing, notes, len(candidates))


def bac(
    img: GrayImage,
    inits: Sequence[Contour],
    train: TrainingSet | None = None,
    weights: EnergyWeights = EnergyWeights(),
    *,
    bandwidth: float = 0.05,
    kind: str = "gaussian_kde",
    tol: float = 1e-7,
    max_iter: int = 500,
    n: int = 200,
    prior: ShapePrior | None = None,
) -> SegmentationResult:
    """Active-contour refinement from user-supplied initial contours.

    Densities come from the training set when given, otherwise from the
    image inside and just outside each initial contour.
    """
    inits = list(inits)
    if not inits:
        raise ValueError("bac needs at least one initial contour")
    timing = {}
    t0 = time.perf_counter()
    if weights.lambda1 > 0:
        if train is not None:
            d_int, d_ext = estimate_pixel_densities(train, bandwidth, kind)
            pairs = [(d_int, d_ext)] * len(inits)
        else:
            pairs = [empirical_densities(img, c, None, bandwidth, kind) for c in inits]
    else:
        pairs = [(None, None)] * len(inits)
    pri = _prior_from(train, prior, weights, n)
    timing["densities"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    states = _evolve_all(img, inits, pairs, pri, weights, tol, max_iter, n)
    timing["evolution"] = time.perf_counter() - t0
    params = {
        "method": "bac",
        "lambda1": weights.lambda1,
        "lambda2": weights.lambda2,
        "lambda3": weights.lambda3,
        "eps": weights.eps,
        "bandwidth": bandwidth,
        "kind": kind,
        "tol": tol,
        "max_iter": max_iter,
        "n": n,
        "densities": "training" if train is not None else "empirical",
    }
    return SegmentationResult(inits, states, params, timing, [], len(inits))


# -- k-means baseline -------------------------------------------------------------------

def kmeans_baseline(img: GrayImage, k: int, seed: int = 0, *, n: int = 200) -> tuple[np.ndarray, list[Contour]]:
    """Cluster grayscale values with 1-D k-means and trace the cluster boundaries.

    Runs one k-means++ initialisation (at most 100 iterations, tolerance
    1e-6) on the distinct values weighted by their pixel counts. Labels are
    numbered by increasing centroid value. When the image has fewer than
    ``k`` distinct values each value becomes its own cluster.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    vals, inv, counts = np.unique(img.values, return_inverse=True, return_counts=True)
    inv = inv.reshape(img.shape)
    if len(vals) <= k:
        labels = inv
    else:
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100, tol=1e-6, random_state=seed)
        km.fit(vals[:, None], sample_weight=counts.astype(float))
        rank = np.argsort(np.argsort(km.cluster_centers_.ravel()))
        labels = rank[km.labels_][inv]
    _, labels = np.unique(labels, return_inverse=True)
    labels = labels.reshape(img.shape).astype(np.int64)
    return labels, extract_contours(labels, n=n)


# -- overlays ---------------------------------------------------------------------------

def render_overlay(img: GrayImage, initial: Sequence[Contour], final: Sequence[Contour], path) -> None:
    """Save the image as RGB with initial contours in red and final contours in blue."""
    g = np.floor(np.clip(img.values, 0, 1) * 255 + 0.5).astype(np.uint8)
    canvas = Image.fromarray(np.stack([g, g, g], axis=-1))
    draw = ImageDraw.Draw(canvas)
    for cs, colour in ((initial, (255, 0, 0)), (final, (0, 0, 255))):
        for c in cs:
            pts = [tuple(p) for p in c.points.tolist()]
            draw.line(pts + [pts[0]], fill=colour, width=1)
    canvas.save(path)
