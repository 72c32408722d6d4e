"""Discrepancy measures between an estimated and a ground-truth segmentation.

Region measures compare rasterised interiors (:class:`PixelRegion`); the
elastic shape distance compares individual contours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .contour import Contour
from .image_core import PixelRegion, rasterize_even_odd
from .shape_elastic import elastic_distance

__all__ = [
    "hausdorff",
    "hamming",
    "jaccard_distance",
    "pm",
    "esd_report",
    "EsdReport",
    "MetricsReport",
    "evaluate",
    "format_table",
]


def _mask(r) -> np.ndarray:
    return np.asarray(r.mask if isinstance(r, PixelRegion) else r, dtype=bool)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    ma, mb = _mask(a), _mask(b)
    if ma.shape != mb.shape:
        raise ValueError(f"region dimensions differ: {ma.shape} vs {mb.shape}")
    return ma, mb


def _directed(ma: np.ndarray, mb: np.ndarray) -> float:
    # exact Euclidean distance from every pixel to the nearest member of mb
    dist = ndimage.distance_transform_edt(~mb)
    return float(dist[ma].max())


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between the pixel centres of two regions."""
    ma, mb = _pair(a, b)
    if not ma.any() or not mb.any():
        raise ValueError("hausdorff distance needs two nonempty regions")
    return max(_directed(ma, mb), _directed(mb, ma))


def _directional_hamming(s1: Sequence[np.ndarray], s2: Sequence[np.ndarray]) -> int:
    # regions are matched by position: s1[i] corresponds to s2[i]
    total = 0
    for i, r2 in enumerate(s2):
        for k, r1 in enumerate(s1):
            if k != i:
                total += int(np.count_nonzero(r2 & r1))
    return total


def hamming(a, b) -> float:
    """Normalised Hamming distance between the partitions {A, A^c} and {B, B^c}.

    Each region is compared with its counterpart (object with object,
    background with background), so the value is ``(FP + FN) / |S|``: 0 for
    identical regions and 1 when ``A`` is the complement of ``B``. Lower is
    better.
    """
    ma, mb = _pair(a, b)
    s1, s2 = (ma, ~ma), (mb, ~mb)
    d = _directional_hamming(s1, s2) + _directional_hamming(s2, s1)
    return d / (2.0 * ma.size)


def jaccard_distance(a, b) -> float:
    """``1 - |A & B| / |A | B|``; two empty regions are at distance 0."""
    ma, mb = _pair(a, b)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return 1.0 - np.count_nonzero(ma & mb) / union


def pm(a, b) -> float:
    """Discovery-rate measure ``1 - TP / (TP + FP + FN)``, with ``A`` the estimate."""
    ma, mb = _pair(a, b)
    tp = np.count_nonzero(ma & mb)
    fp = np.count_nonzero(ma & ~mb)
    fn = np.count_nonzero(~ma & mb)
    denom = tp + fp + fn
    if denom == 0:
        return 0.0
    return 1.0 - tp / denom


@dataclass
class EsdReport:
    """Elastic shape distances of area-matched contour pairs.

    ``distances[i]`` compares the i-th largest estimate with the i-th
    largest truth; surplus contours on either side are listed by their
    index in the caller's list.
    """

    distances: list[float] = field(default_factory=list)
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_estimate: list[int] = field(default_factory=list)
    unmatched_truth: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "distances": [float(d) for d in self.distances],
            "pairs": [list(p) for p in self.pairs],
            "unmatched_estimate": list(self.unmatched_estimate),
            "unmatched_truth": list(self.unmatched_truth),
        }


def esd_report(est: Sequence[Contour], truth: Sequence[Contour]) -> EsdReport:
    """Match contours by descending enclosed area and compare their shapes."""
    oe = sorted(range(len(est)), key=lambda i: -est[i].area)
    ot = sorted(range(len(truth)), key=lambda i: -truth[i].area)
    m = min(len(oe), len(ot))
    rep = EsdReport(unmatched_estimate=oe[m:], unmatched_truth=ot[m:])
    for i, j in zip(oe[:m], ot[:m]):
        rep.pairs.append((i, j))
        rep.distances.append(float(elastic_distance(est[i], truth[j])))
    return rep


@dataclass
class MetricsReport:
    hausdorff: float
    hamming: float
    jaccard_distance: float
    pm: float
    esd: list[float] = field(default_factory=list)
    unmatched_estimate: list[int] = field(default_factory=list)
    unmatched_truth: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.hausdorff >= 0:
            raise ValueError("hausdorff must be >= 0")
        for name in ("hamming", "jaccard_distance", "pm"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if any(not 0.0 <= d <= np.pi + 1e-12 for d in self.esd):
            raise ValueError("elastic shape distances must lie in [0, pi]")

    def esd_labels(self) -> list[str]:
        if len(self.esd) == 2:
            return ["Outer ESD", "Inner ESD"]
        if len(self.esd) == 1:
            return ["ESD"]
        return [f"ESD {i + 1}" for i in range(len(self.esd))]

    def rows(self) -> list[tuple[str, float]]:
        out = [
            ("d_H (Hausdorff)", self.hausdorff),
            ("p_H (Hamming)", self.hamming),
            ("d_J (Jaccard)", self.jaccard_distance),
            ("PM (discovery rate)", self.pm),
        ]
        return out + list(zip(self.esd_labels(), self.esd))

    def to_dict(self) -> dict:
        return {
            "hausdorff": float(self.hausdorff),
            "hamming": float(self.hamming),
            "jaccard_distance": float(self.jaccard_distance),
            "pm": float(self.pm),
            "esd": [float(d) for d in self.esd],
            "unmatched_estimate": list(self.unmatched_estimate),
            "unmatched_truth": list(self.unmatched_truth),
        }

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        return cls(**d)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def to_table(self, name: str = "estimate") -> str:
        return format_table({name: self})


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned text table, one column per named report.

    ESD rows are taken from the report with the most contour pairs; missing
    entries are shown as ``-``. Unmatched contours are listed below the table.
    """
    names = list(reports)
    widest = max(reports.values(), key=lambda r: len(r.esd), default=None)
    labels = [lab for lab, _ in widest.rows()] if widest else []
    cells = {n: dict(reports[n].rows()) for n in names}
    w0 = max([len("Measure")] + [len(s) for s in labels])
    cols = [max(len(n), 8) for n in names]
    lines = ["Measure".ljust(w0) + " | " + "  ".join(n.rjust(w) for n, w in zip(names, cols))]
    lines.append("-" * len(lines[0]))
    for lab in labels:
        vals = []
        for n, w in zip(names, cols):
            v = cells[n].get(lab)
            vals.append(("-" if v is None else f"{v:.4f}").rjust(w))
        lines.append(lab.ljust(w0) + " | " + "  ".join(vals))
    for n in names:
        r = reports[n]
        if r.unmatched_estimate or r.unmatched_truth:
            lines.append(
                f"{n}: unmatched estimate contours {r.unmatched_estimate}, "
                f"unmatched truth contours {r.unmatched_truth}"
            )
    return "\n".join(lines)


def evaluate(est: Sequence[Contour], truth: Sequence[Contour], width: int, height: int) -> MetricsReport:
    """All five measures for estimated vs true contours on a ``width`` x ``height`` grid.

    Interiors are the even-odd fill of each contour list, so nested
    contours (the donut) describe a region with a hole.
    """
    a = rasterize_even_odd(list(est), width, height)
    b = rasterize_even_odd(list(truth), width, height)
    hd = hausdorff(a, b) if a.mask.any() and b.mask.any() else float(np.hypot(width, height))
    esd = esd_report(est, truth)
    return MetricsReport(
        hausdorff=hd,
        hamming=hamming(a, b),
        jaccard_distance=jaccard_distance(a, b),
        pm=pm(a, b),
        esd=esd.distances,
        unmatched_estimate=esd.unmatched_estimate,
        unmatched_truth=esd.unmatched_truth,
    )
