"""Mean-shift modes in (position, value) space, boundary persistence and merging.

Intensities enter the feature space on the [0, 1] scale while the value
bandwidth ``sigma2`` is given in 8-bit units (0-255), so ``sigma2=5`` means
a value bandwidth of 5/255.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from skimage import measure

from .contour import Contour
from .image_core import GrayImage, PixelRegion

__all__ = [
    "ModeSet",
    "ClusterHierarchy",
    "MergeEvent",
    "mean_shift_modes",
    "mean_shift_trajectory",
    "pixel_densities",
    "compute_persistence",
    "segment",
    "boundary_map",
    "extract_contours",
    "VALUE_SCALE",
    "PERSISTENCE_SCALE",
]

VALUE_SCALE = 255.0
PERSISTENCE_SCALE = 100.0
STEP_TOL = 1e-4
MAX_SHIFT_ITER = 200
SHARE_RADIUS = 0.25


# -- numba kernels --------------------------------------------------------------

@nb.njit(cache=True)
def _window(x, y, r, w, h):
    if r < 0:
        return 0, w - 1, 0, h - 1
    cx = int(np.floor(x + 0.5))
    cy = int(np.floor(y + 0.5))
    return max(cx - r, 0), min(cx + r, w - 1), max(cy - r, 0), min(cy + r, h - 1)


@nb.njit(cache=True)
def _kernel_sum(vals, x, y, v, a1, a2, r):
    # density and weighted means at (x, y, v); a1 = 1/(2 s1^2), a2 = 1/(2 s2^2)
    h, w = vals.shape
    x0, x1, y0, y1 = _window(x, y, r, w, h)
    sw = 0.0
    sx = 0.0
    sy = 0.0
    sv = 0.0
    for j in range(y0, y1 + 1):
        dy2 = (j - y) * (j - y)
        for i in range(x0, x1 + 1):
            dv = vals[j, i] - v
            wt = np.exp(-a1 * ((i - x) * (i - x) + dy2) - a2 * dv * dv)
            sw += wt
            sx += wt * i
            sy += wt * j
            sv += wt * vals[j, i]
    return sw, sx, sy, sv


@nb.njit(cache=True)
def _shift_all(vals, order, s1, s2, r, tol, maxit, hit):
    # Pixels are processed in the given order (densest first). A trajectory
    # that comes within `hit` (combined metric) of the feature point of an
    # already processed pixel adopts that pixel's endpoint.
    h, w = vals.shape
    n = h * w
    a1 = 0.5 / (s1 * s1)
    a2 = 0.5 / (s2 * s2)
    out = np.empty((n, 3))
    dens = np.empty(n)
    iters = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    for kk in range(n):
        k = order[kk]
        j = k // w
        i = k - j * w
        x, y, v = float(i), float(j), vals[j, i]
        adopted = -1
        it = 0
        while it < maxit:
            sw, sx, sy, sv = _kernel_sum(vals, x, y, v, a1, a2, r)
            nx, ny, nv = sx / sw, sy / sw, sv / sw
            step = np.sqrt((nx - x) ** 2 + (ny - y) ** 2) / s1 + abs(nv - v) / s2
            x, y, v = nx, ny, nv
            it += 1
            if step < tol:
                break
            if hit > 0:
                ci = int(np.floor(x + 0.5))
                cj = int(np.floor(y + 0.5))
                if 0 <= ci < w and 0 <= cj < h:
                    q = cj * w + ci
                    if done[q] and q != k:
                        dist = np.sqrt((x - ci) ** 2 + (y - cj) ** 2) / s1 + abs(v - vals[cj, ci]) / s2
                        if dist < hit:
                            adopted = q
                            break
        if adopted >= 0:
            out[k, 0] = out[adopted, 0]
            out[k, 1] = out[adopted, 1]
            out[k, 2] = out[adopted, 2]
            dens[k] = dens[adopted]
        else:
            out[k, 0] = x
            out[k, 1] = y
            out[k, 2] = v
            dens[k] = _kernel_sum(vals, x, y, v, a1, a2, r)[0]
        iters[k] = it
        done[k] = True
    return out, dens, iters


@nb.njit(cache=True)
def _pixel_dens(vals, s1, s2, r):
    h, w = vals.shape
    a1 = 0.5 / (s1 * s1)
    a2 = 0.5 / (s2 * s2)
    out = np.empty((h, w))
    for j in range(h):
        for i in range(w):
            out[j, i] = _kernel_sum(vals, float(i), float(j), vals[j, i], a1, a2, r)[0]
    return out


@nb.njit(cache=True)
def _trajectory(vals, x, y, v, s1, s2, r, tol, maxit):
    a1 = 0.5 / (s1 * s1)
    a2 = 0.5 / (s2 * s2)
    pts = np.empty((maxit + 1, 3))
    dens = np.empty(maxit + 1)
    pts[0, 0] = x
    pts[0, 1] = y
    pts[0, 2] = v
    n = 1
    for _ in range(maxit):
        sw, sx, sy, sv = _kernel_sum(vals, x, y, v, a1, a2, r)
        dens[n - 1] = sw
        nx, ny, nv = sx / sw, sy / sw, sv / sw
        step = np.sqrt((nx - x) ** 2 + (ny - y) ** 2) / s1 + abs(nv - v) / s2
        x, y, v = nx, ny, nv
        pts[n, 0] = x
        pts[n, 1] = y
        pts[n, 2] = v
        n += 1
        if step < tol:
            break
    dens[n - 1] = _kernel_sum(vals, x, y, v, a1, a2, r)[0]
    return pts[:n], dens[:n]


def _radius(sigma1: float, truncate: float | None) -> int:
    return -1 if truncate is None else int(np.ceil(truncate * sigma1))


def _check_bandwidths(sigma1, sigma2):
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("sigma1 and sigma2 must be > 0")


# -- modes ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModeSet:
    """Deduplicated mean-shift modes.

    Attributes
    ----------
    modes : ndarray, shape (K, 3)
        ``(x, y, value)`` of each mode, value on the [0, 1] scale.
    density : ndarray, shape (K,)
        Kernel density at each mode, nonincreasing.
    labels : ndarray, shape (H, W)
        Index of the mode each pixel's trajectory reached.
    """

    modes: np.ndarray
    density: np.ndarray
    labels: np.ndarray
    sigma1: float
    sigma2: float
    truncate: float | None = 3.0
    iterations: np.ndarray | None = field(default=None, repr=False)
    pixel_density: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.density)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        lo, hi = min(ra, rb), max(ra, rb)  # lower index wins
        self.parent[hi] = lo
        return lo


def _dedup(points: np.ndarray, dens: np.ndarray, s1: float, s2: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Group converged points lying within 0.5*s1 spatially and 0.5*s2 in value (transitively)."""
    scaled = np.column_stack([points[:, 0] / s1, points[:, 1] / s1, points[:, 2] / s2])
    # collapse numerically identical endpoints before the pair search
    key = np.round(scaled / 1e-3).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    reps = scaled[first]
    tree = cKDTree(reps)
    pairs = tree.query_pairs(np.sqrt(0.5), output_type="ndarray")
    if len(pairs):
        d = reps[pairs[:, 0]] - reps[pairs[:, 1]]
        ok = (np.hypot(d[:, 0], d[:, 1]) <= 0.5) & (np.abs(d[:, 2]) <= 0.5)
        pairs = pairs[ok]
    m = len(reps)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m)) if len(pairs) else coo_matrix((m, m))
    _, comp = connected_components(graph, directed=False)
    group = comp[inv]
    ngroups = group.max() + 1
    # representative: the member with the highest density
    order = np.lexsort((-dens, group))
    starts = np.searchsorted(group[order], np.arange(ngroups))
    best = order[starts]
    return group, points[best], dens[best]


def mean_shift_modes(
    img: GrayImage,
    sigma1: float,
    sigma2: float,
    *,
    truncate: float | None = 3.0,
    max_iter: int = MAX_SHIFT_ITER,
    share_radius: float = SHARE_RADIUS,
) -> ModeSet:
    """Run mean-shift from every pixel's feature point and merge coincident endpoints.

    Parameters
    ----------
    sigma1 : float
        Spatial bandwidth in pixels.
    sigma2 : float
        Value bandwidth in 8-bit units.
    truncate : float or None
        Kernel window half-width in units of ``sigma1``; ``None`` uses every pixel.
    max_iter : int
        Iteration cap per trajectory.
    share_radius : float
        Pixels are processed densest first; a trajectory passing within this
        combined-metric distance of an already processed pixel's feature point
        takes over that pixel's endpoint. 0 disables sharing.
    """
    _check_bandwidths(sigma1, sigma2)
    vals = np.ascontiguousarray(img.values, dtype=float)
    s2 = sigma2 / VALUE_SCALE
    r = _radius(sigma1, truncate)
    fhat = _pixel_dens(vals, float(sigma1), s2, r)
    order = np.argsort(-fhat.ravel(), kind="stable")
    pts, dens, iters = _shift_all(vals, order, float(sigma1), s2, r, STEP_TOL, max_iter, share_radius)
    group, modes, mdens = _dedup(pts, dens, sigma1, s2)
    order = np.argsort(-mdens, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    labels = rank[group].reshape(vals.shape)
    return ModeSet(
        modes[order], mdens[order], labels, float(sigma1), float(sigma2), truncate,
        iters.reshape(vals.shape), fhat,
    )


def mean_shift_trajectory(
    img: GrayImage, pixel: tuple[int, int], sigma1: float, sigma2: float, *, truncate: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Feature-space path from pixel ``(x, y)`` and the density at each point on it."""
    _check_bandwidths(sigma1, sigma2)
    vals = np.ascontiguousarray(img.values, dtype=float)
    x, y = pixel
    return _trajectory(
        vals, float(x), float(y), vals[y, x], float(sigma1), sigma2 / VALUE_SCALE,
        _radius(sigma1, truncate), STEP_TOL, MAX_SHIFT_ITER,
    )


def pixel_densities(img: GrayImage, sigma1: float, sigma2: float, *, truncate: float | None = 3.0) -> np.ndarray:
    """Kernel density at each pixel's own feature point."""
    _check_bandwidths(sigma1, sigma2)
    vals = np.ascontiguousarray(img.values, dtype=float)
    return _pixel_dens(vals, float(sigma1), sigma2 / VALUE_SCALE, _radius(sigma1, truncate))


# -- persistence ------------------------------------------------------------------

class MergeEvent(tuple):
    """``(threshold, j, k)``: clusters ``j`` and ``k`` merge once T exceeds ``threshold``."""

    __slots__ = ()

    def __new__(cls, threshold, j, k):
        return super().__new__(cls, (float(threshold), int(j), int(k)))

    threshold = property(lambda s: s[0])
    pair = property(lambda s: (s[1], s[2]))


@dataclass(frozen=True, eq=False)
class ClusterHierarchy:
    """Saddles, persistences and the merge tree over a :class:`ModeSet`.

    ``saddles`` and ``persistence`` are keyed by ``(j, k)`` with ``j < k``
    (``j`` the denser mode) and hold raw densities. ``merge_tree`` thresholds
    are on the rescaled scale where the densest mode equals 100.
    """

    modes: ModeSet
    saddles: dict
    persistence: dict
    sign_inconsistent: frozenset
    merge_tree: list
    scale: float

    def labels_at(self, T: float) -> np.ndarray:
        """Label map after merging every event with threshold below ``T``."""
        if T < 0:
            raise ValueError("T must be >= 0")
        uf = _UnionFind(self.modes.k)
        for t, j, k in self.merge_tree:
            if t < T:
                uf.union(j, k)
        root = np.array([uf.find(i) for i in range(self.modes.k)], dtype=np.int64)
        _, compact = np.unique(root, return_inverse=True)
        return compact.ravel()[self.modes.labels]

    def to_dict(self) -> dict:
        ms = self.modes
        return {
            "sigma1": ms.sigma1,
            "sigma2": ms.sigma2,
            "scale": self.scale,
            "modes": [{"x": float(m[0]), "y": float(m[1]), "value": float(m[2]), "density": float(d)}
                      for m, d in zip(ms.modes, ms.density)],
            "saddles": [[j, k, float(s)] for (j, k), s in sorted(self.saddles.items())],
            "persistence": [[j, k, float(p)] for (j, k), p in sorted(self.persistence.items())],
            "sign_inconsistent": sorted([list(p) for p in self.sign_inconsistent]),
            "merge_tree": [list(e) for e in self.merge_tree],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _interface_saddles(labels: np.ndarray, fhat: np.ndarray) -> dict:
    a_parts, b_parts, v_parts = [], [], []
    for la, lb, fa, fb in (
        (labels[:, :-1], labels[:, 1:], fhat[:, :-1], fhat[:, 1:]),
        (labels[:-1, :], labels[1:, :], fhat[:-1, :], fhat[1:, :]),
    ):
        diff = la != lb
        a_parts.append(np.minimum(la[diff], lb[diff]))
        b_parts.append(np.maximum(la[diff], lb[diff]))
        v_parts.append(np.minimum(fa[diff], fb[diff]))
    a = np.concatenate(a_parts).astype(np.int64)
    b = np.concatenate(b_parts).astype(np.int64)
    v = np.concatenate(v_parts)
    if a.size == 0:
        return {}
    key = a * (int(labels.max()) + 1) + b
    uniq, inv = np.unique(key, return_inverse=True)
    best = np.full(len(uniq), -np.inf)
    np.maximum.at(best, inv.ravel(), v)
    m = int(labels.max()) + 1
    return {(int(u // m), int(u % m)): float(s) for u, s in zip(uniq, best)}


def compute_persistence(
    img: GrayImage, modes: ModeSet, *, pixel_density: np.ndarray | None = None
) -> ClusterHierarchy:
    """Boundary persistence of every adjacent cluster pair and the resulting merge tree.

    The saddle between clusters ``j`` and ``k`` is the largest value of
    ``min(f(p), f(q))`` over 4-adjacent pixel pairs ``p`` in ``j``, ``q`` in
    ``k``, where ``f`` is the density at each pixel's feature point. Pairwise
    persistence is ``f(m_k) - saddle`` for the weaker mode ``k``, clipped at 0;
    pairs where it would be negative are recorded in ``sign_inconsistent``.

    The merge tree applies the elder rule: pairs are processed by decreasing
    saddle and each event's threshold is the persistence of the younger of the
    two components being joined, measured from its own peak.
    """
    if modes.k == 0:
        raise ValueError("mode set is empty")
    if pixel_density is not None:
        fhat = np.asarray(pixel_density, dtype=float)
    elif modes.pixel_density is not None:
        fhat = modes.pixel_density
    else:
        fhat = pixel_densities(img, modes.sigma1, modes.sigma2, truncate=modes.truncate)
    scale = PERSISTENCE_SCALE / float(modes.density[0])
    saddles = _interface_saddles(modes.labels, fhat)
    persistence, bad = {}, set()
    for (j, k), s in saddles.items():
        p = float(modes.density[k]) - s
        if p < 0:
            bad.add((j, k))
        persistence[(j, k)] = max(p, 0.0)
    uf = _UnionFind(modes.k)
    tree = []
    for (j, k), s in sorted(saddles.items(), key=lambda kv: (-kv[1], kv[0])):
        rj, rk = uf.find(j), uf.find(k)
        if rj == rk:
            continue
        # roots are the densest members, so the younger peak is the larger index
        young = max(rj, rk)
        t = max(float(modes.density[young]) - s, 0.0) * scale
        tree.append(MergeEvent(t, j, k))
        uf.union(rj, rk)
    tree.sort(key=lambda e: (e[0], e[1], e[2]))
    return ClusterHierarchy(modes, saddles, persistence, frozenset(bad), tree, scale)


def boundary_map(labels: np.ndarray) -> PixelRegion:
    """Pixels with at least one 4-neighbour carrying a different label."""
    lab = np.asarray(labels)
    b = np.zeros(lab.shape, dtype=bool)
    dx = lab[:, 1:] != lab[:, :-1]
    dy = lab[1:, :] != lab[:-1, :]
    b[:, 1:] |= dx
    b[:, :-1] |= dx
    b[1:, :] |= dy
    b[:-1, :] |= dy
    return PixelRegion(b)


def segment(
    img: GrayImage,
    sigma1: float = 3.0,
    sigma2: float = 5.0,
    T: float = 5.0,
    *,
    truncate: float | None = 3.0,
    hierarchy: ClusterHierarchy | None = None,
) -> tuple[np.ndarray, PixelRegion, ClusterHierarchy]:
    """TOP segmentation: modes, persistence merge at threshold ``T``, boundary map.

    Returns the compact label map, the boundary map and the hierarchy (which
    can be passed back in to re-threshold without recomputing the modes).
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    if hierarchy is None:
        ms = mean_shift_modes(img, sigma1, sigma2, truncate=truncate)
        hierarchy = compute_persistence(img, ms)
    labels = hierarchy.labels_at(T)
    return labels, boundary_map(labels), hierarchy


# -- contour tracing ---------------------------------------------------------------

def _on_frame(loop: np.ndarray, w: int, h: int) -> bool:
    tol = 1e-9
    x, y = loop[:, 0], loop[:, 1]
    edge = (np.abs(x + 0.5) < tol) | (np.abs(x - (w - 0.5)) < tol) | (np.abs(y + 0.5) < tol) | (np.abs(y - (h - 0.5)) < tol)
    return bool(edge.all())


def extract_contours(labels: np.ndarray, n: int = 200, *, min_points: int = 4) -> list[Contour]:
    """Trace every cluster's outer and hole boundaries as closed contours.

    Each cluster mask is traced by marching squares at level 0.5 on a
    zero-padded copy, so clusters touching the image edge close along the
    frame (the frame itself is dropped). Loops shared by two clusters are
    kept once. Contours are resampled to ``n`` points and sorted by
    decreasing enclosed area.
    """
    lab = np.asarray(labels)
    if lab.size == 0:
        return []
    h, w = lab.shape
    out: list[tuple[float, Contour]] = []
    seen = set()
    for lbl in np.unique(lab):
        mask = lab == lbl
        rows = np.nonzero(mask.any(axis=1))[0]
        cols = np.nonzero(mask.any(axis=0))[0]
        r0, c0 = rows[0], cols[0]
        crop = np.pad(mask[r0 : rows[-1] + 1, c0 : cols[-1] + 1].astype(float), 1)
        for loop in measure.find_contours(crop, 0.5):
            if len(loop) < min_points + 1:
                continue
            pts = loop[:-1, ::-1] + np.array([c0 - 1.0, r0 - 1.0])
            pts = np.clip(pts, -0.5, None)
            pts[:, 0] = np.minimum(pts[:, 0], w - 0.5)
            pts[:, 1] = np.minimum(pts[:, 1], h - 0.5)
            if _on_frame(pts, w, h):
                continue
            key = frozenset(map(tuple, np.round(pts, 6)))
            if key in seen:
                continue
            seen.add(key)
            keep = np.any(np.diff(np.vstack([pts, pts[:1]]), axis=0) != 0, axis=1)
            pts = pts[keep]
            if len(pts) < 3:
                continue
            c = Contour(pts)
            if c.area <= 0:
                continue
            out.append((c.area, c.resample(n)))
    out.sort(key=lambda t: -t[0])
    return [c for _, c in out]
