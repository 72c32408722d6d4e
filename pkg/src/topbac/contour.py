"""Closed planar contours and the discrete geometry shared by every module.

Coordinates follow the image convention used throughout the package:
``x`` is the column index, ``y`` the row index, the origin is the top-left
pixel and pixel centres sit on integer coordinates.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = [
    "Contour",
    "circle",
    "ellipse",
    "read_contour_csv",
    "write_contour_csv",
    "signed_area",
    "segment_intersections",
]


def signed_area(points: np.ndarray) -> float:
    """Shoelace area of a closed polygon; positive for counterclockwise."""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
        c[..., 0] - a[..., 0]
    )


def segment_intersections(points: np.ndarray) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` of non-adjacent polygon edges that touch or cross.

    Edge ``i`` joins vertex ``i`` to vertex ``i + 1`` (cyclically).
    """
    p0 = np.asarray(points, dtype=float)
    n = len(p0)
    if n < 4:
        return []
    p1 = np.roll(p0, -1, axis=0)
    a, b = p0[:, None, :], p1[:, None, :]
    c, d = p0[None, :, :], p1[None, :, :]
    o1 = _orient(a, b, c)
    o2 = _orient(a, b, d)
    o3 = _orient(c, d, a)
    o4 = _orient(c, d, b)
    scale = max(float(np.ptp(p0)), 1.0)
    eps = 1e-12 * scale * scale
    s1, s2, s3, s4 = (np.where(np.abs(o) <= eps, 0, np.sign(o)) for o in (o1, o2, o3, o4))
    proper = (s1 * s2 < 0) & (s3 * s4 < 0)

    def on_seg(pa, pb, q, s):
        lo = np.minimum(pa, pb) - 1e-12 * scale
        hi = np.maximum(pa, pb) + 1e-12 * scale
        inside = np.all((q >= lo) & (q <= hi), axis=-1)
        return (s == 0) & inside

    touch = (
        on_seg(a, b, np.broadcast_to(c, (n, n, 2)), s1)
        | on_seg(a, b, np.broadcast_to(d, (n, n, 2)), s2)
        | on_seg(c, d, np.broadcast_to(a, (n, n, 2)), s3)
        | on_seg(c, d, np.broadcast_to(b, (n, n, 2)), s4)
    )
    hit = proper | touch
    i, j = np.nonzero(np.triu(hit, k=2))
    keep = ~((i == 0) & (j == n - 1))
    return [(int(u), int(v)) for u, v in zip(i[keep], j[keep])]


class Contour:
    """Closed polygon of ``N`` ordered points, normalised to counterclockwise.

    Point ``N - 1`` connects back to point ``0``. Instances are immutable.
    """

    __slots__ = ("_points",)

    def __init__(self, points, *, orient: bool = True):
        pts = np.array(points, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"contour points must have shape (N, 2), got {pts.shape}")
        if len(pts) < 3:
            raise ValueError(f"a contour needs at least 3 points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("contour points must be finite")
        step = np.roll(pts, -1, axis=0) - pts
        dup = np.nonzero(np.all(step == 0.0, axis=1))[0]
        if len(dup):
            raise ValueError(f"consecutive contour points coincide at index {int(dup[0])}")
        if orient and signed_area(pts) < 0:
            # keep point 0 as the seed, reverse the traversal
            pts = np.concatenate([pts[:1], pts[:0:-1]])
        pts.flags.writeable = False
        self._points = pts

    # -- basic properties -------------------------------------------------
    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return len(self._points)

    def __len__(self) -> int:
        return len(self._points)

    def __repr__(self) -> str:
        return f"Contour(n={self.n}, area={self.area:.3f}, length={self.length:.3f})"

    @property
    def signed_area(self) -> float:
        return signed_area(self._points)

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.roll(self._points, -1, axis=0) - self._points, axis=1)

    @property
    def length(self) -> float:
        return float(self.edge_lengths.sum())

    @property
    def centroid(self) -> np.ndarray:
        """Area centroid; falls back to the vertex mean for zero-area polygons."""
        p = self._points
        q = np.roll(p, -1, axis=0)
        cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
        a = 0.5 * cross.sum()
        if abs(a) < 1e-12:
            return p.mean(axis=0)
        cx = ((p[:, 0] + q[:, 0]) * cross).sum() / (6.0 * a)
        cy = ((p[:, 1] + q[:, 1]) * cross).sum() / (6.0 * a)
        return np.array([cx, cy])

    # -- transforms --------------------------------------------------------
    def translated(self, offset) -> Contour:
        return Contour(self._points + np.asarray(offset, dtype=float))

    def scaled(self, factor: float, about=None) -> Contour:
        about = self.centroid if about is None else np.asarray(about, dtype=float)
        return Contour((self._points - about) * factor + about)

    def rotated(self, angle: float, about=None) -> Contour:
        about = self.centroid if about is None else np.asarray(about, dtype=float)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return Contour((self._points - about) @ rot.T + about)

    def shifted(self, k: int) -> Contour:
        """Cyclically move the seed point by ``k`` indices."""
        return Contour(np.roll(self._points, -k, axis=0))

    def resample(self, n: int | None = None) -> Contour:
        """Uniform arc-length resampling to ``n`` points, keeping point 0."""
        n = self.n if n is None else int(n)
        closed = np.vstack([self._points, self._points[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        total = s[-1]
        if total <= 0:
            raise ValueError("cannot resample a contour of zero length")
        target = np.arange(n) * (total / n)
        x = np.interp(target, s, closed[:, 0])
        y = np.interp(target, s, closed[:, 1])
        return Contour(np.column_stack([x, y]), orient=False)

    def clipped(self, width: int, height: int) -> Contour:
        p = np.column_stack(
            [np.clip(self._points[:, 0], 0, width - 1), np.clip(self._points[:, 1], 0, height - 1)]
        )
        return Contour(p, orient=False)

    # -- differential quantities --------------------------------------------
    def tangents(self) -> np.ndarray:
        """Unit tangents from centred differences."""
        t = np.roll(self._points, -1, axis=0) - np.roll(self._points, 1, axis=0)
        norm = np.linalg.norm(t, axis=1, keepdims=True)
        return t / np.where(norm > 0, norm, 1.0)

    def outward_normals(self) -> np.ndarray:
        t = self.tangents()
        return np.column_stack([t[:, 1], -t[:, 0]])

    def curvature(self) -> np.ndarray:
        """Signed Menger curvature through each vertex and its two neighbours.

        Positive where the curve bends towards its interior (convex parts).
        """
        a = np.roll(self._points, 1, axis=0)
        b = self._points
        c = np.roll(self._points, -1, axis=0)
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        ab = np.linalg.norm(b - a, axis=1)
        bc = np.linalg.norm(c - b, axis=1)
        ca = np.linalg.norm(a - c, axis=1)
        denom = ab * bc * ca
        return np.where(denom > 0, 2.0 * cross / np.where(denom > 0, denom, 1.0), 0.0)

    def self_intersections(self) -> list[tuple[int, int]]:
        return segment_intersections(self._points)

    def is_simple(self) -> bool:
        return not self.self_intersections()


def circle(center, radius: float, n: int = 200, phase: float = 0.0) -> Contour:
    t = phase + 2.0 * np.pi * np.arange(n) / n
    c = np.asarray(center, dtype=float)
    return Contour(np.column_stack([c[0] + radius * np.cos(t), c[1] + radius * np.sin(t)]))


def ellipse(center, a: float, b: float, n: int = 200, angle: float = 0.0) -> Contour:
    t = 2.0 * np.pi * np.arange(n) / n
    pts = np.column_stack([a * np.cos(t), b * np.sin(t)])
    cs, sn = np.cos(angle), np.sin(angle)
    pts = pts @ np.array([[cs, -sn], [sn, cs]]).T + np.asarray(center, dtype=float)
    return Contour(pts)


def read_contour_csv(path) -> Contour:
    """Read ``x,y`` rows (an optional ``x,y`` header is skipped)."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ValueError(f"{path}: malformed contour row {row!r}") from None
    if not rows:
        raise ValueError(f"{path}: no contour vertices")
    return Contour(rows)


def write_contour_csv(contour: Contour, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in contour.points:
            w.writerow([repr(float(x)), repr(float(y))])
