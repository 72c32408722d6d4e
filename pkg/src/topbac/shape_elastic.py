"""Elastic shape analysis of closed curves with square-root velocity functions.

Tangent vectors are ``(N, 2)`` arrays with the L2 inner product
``<u, v> = (1/N) sum_i u_i . v_i``. :func:`vectorize` maps them to flat
length-``2N`` vectors scaled by ``1/sqrt(N)`` so that Euclidean and L2
norms agree; the shape prior works in that flat space.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from math import gcd
from pathlib import Path
from typing import NamedTuple, Sequence

import numba as nb
import numpy as np
from scipy import ndimage

from .contour import Contour, circle

__all__ = [
    "Srvf",
    "Registration",
    "KarcherResult",
    "ShapePrior",
    "PriorUpdate",
    "DegenerateShapeError",
    "to_srvf",
    "from_srvf",
    "inner",
    "register",
    "elastic_distance",
    "exp_map",
    "inv_exp_map",
    "parallel_transport",
    "karcher_mean",
    "fit_prior",
    "prior_energy",
    "prior_gradient",
    "prior_update_direction",
    "vectorize",
    "unvectorize",
]

log = logging.getLogger(__name__)

DEFAULT_N = 200
DP_NEIGHBOURHOOD = 6
WARP_SMOOTH = 2.0  # std (samples) of the smoothing applied to DP warp increments
DP_BAND = 0.25  # fraction of N the warp may depart from the diagonal
ANTIPODAL_TOL = 1e-6
PRIOR_SEEDS = 3  # seeds tried when registering a curve to the prior mean


class DegenerateShapeError(ValueError):
    """Zero curves, antipodal shapes or a prior without variance."""


# -- SRVF -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Srvf:
    """SRVF samples ``q(t_i)`` on the uniform grid ``t_i = i/N``."""

    samples: np.ndarray

    def __post_init__(self):
        q = np.array(self.samples, dtype=float, copy=True)
        if q.ndim != 2 or q.shape[1] != 2:
            raise ValueError(f"SRVF samples must have shape (N, 2), got {q.shape}")
        q.flags.writeable = False
        object.__setattr__(self, "samples", q)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.samples**2, axis=1))))

    def normalized(self) -> Srvf:
        nrm = self.norm
        if nrm < 1e-12:
            raise DegenerateShapeError("cannot normalise a zero SRVF")
        return Srvf(self.samples / nrm)


def inner(u, v) -> float:
    """L2 inner product of two ``(N, 2)`` fields (or :class:`Srvf`)."""
    a = u.samples if isinstance(u, Srvf) else np.asarray(u)
    b = v.samples if isinstance(v, Srvf) else np.asarray(v)
    return float(np.sum(a * b) / len(a))


def _norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.sum(v * v) / len(v)))


def vectorize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v.reshape(-1) / np.sqrt(len(v))


def unvectorize(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    n = len(w) // 2
    return w.reshape(n, 2) * np.sqrt(n)


def _velocity(points: np.ndarray) -> np.ndarray:
    n = len(points)
    return (np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)) * (n / 2.0)


def to_srvf(c: Contour, *, normalize: bool = True) -> Srvf:
    """``q = beta' / sqrt(|beta'|)`` from centred differences, optionally scaled to unit norm."""
    pts = c.points if isinstance(c, Contour) else np.asarray(c, dtype=float)
    vel = _velocity(pts)
    speed = np.linalg.norm(vel, axis=1)
    safe = np.where(speed < 1e-12, 1.0, np.sqrt(speed))
    q = np.where((speed < 1e-12)[:, None], 0.0, vel / safe[:, None])
    s = Srvf(q)
    return s.normalized() if normalize else s


def from_srvf(q: Srvf, start=(0.0, 0.0), *, close: bool = False) -> Contour:
    """Integrate ``beta' = q |q|`` by the cumulative trapezoid rule.

    ``close=True`` removes the linear drift so the last point meets the first.
    """
    s = q.samples if isinstance(q, Srvf) else np.asarray(q, dtype=float)
    if np.max(np.abs(s)) < 1e-12:
        raise DegenerateShapeError("zero SRVF integrates to a single point")
    n = len(s)
    vel = s * np.linalg.norm(s, axis=1, keepdims=True)
    nxt = np.roll(vel, -1, axis=0)
    steps = 0.5 * (vel + nxt) / n
    pts = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    if close:
        pts = pts - np.outer(np.arange(n + 1) / n, pts[-1])
    pts = pts[:-1] + np.asarray(start, dtype=float)
    return Contour(pts, orient=False)


# -- registration ----------------------------------------------------------------------

def _moves(k: int) -> np.ndarray:
    return np.array([(a, b) for a in range(1, k + 1) for b in range(1, k + 1) if gcd(a, b) == 1], dtype=np.int64)


_MOVES = _moves(DP_NEIGHBOURHOOD)


@nb.njit(cache=True)
def _interp_periodic(q, s):
    n = q.shape[0]
    f = np.floor(s)
    a = s - f
    i0 = int(f) % n
    i1 = (i0 + 1) % n
    return (1 - a) * q[i0, 0] + a * q[i1, 0], (1 - a) * q[i0, 1] + a * q[i1, 1]


@nb.njit(cache=True)
def _dp(q1, q2, moves, band):
    # Minimise sum_t |q1(t) - sqrt(g') q2(g(t))|^2 over monotone lattice paths
    # from (0, 0) to (N, N) staying within `band` of the diagonal; node
    # (i, j) means g(i) = j in index units.
    n = q1.shape[0]
    inf = 1e300
    cost = np.full((n + 1, n + 1), inf)
    pred = np.full((n + 1, n + 1), -1, dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(max(1, i - band), min(n, i + band) + 1):
            best = inf
            bm = -1
            for m in range(moves.shape[0]):
                di = moves[m, 0]
                dj = moves[m, 1]
                pi = i - di
                pj = j - dj
                if pi < 0 or pj < 0 or abs(pi - pj) > band:
                    continue
                c0 = cost[pi, pj]
                if c0 >= inf:
                    continue
                slope = dj / di
                rs = np.sqrt(slope)
                e = 0.0
                for t in range(pi, i):
                    gx, gy = _interp_periodic(q2, pj + (t - pi) * slope)
                    dx = q1[t, 0] - rs * gx
                    dy = q1[t, 1] - rs * gy
                    e += dx * dx + dy * dy
                c = c0 + e
                if c < best:
                    best = c
                    bm = m
            cost[i, j] = best
            pred[i, j] = bm
    # backtrack
    path_i = [n]
    path_j = [n]
    i, j = n, n
    while i > 0 or j > 0:
        m = pred[i, j]
        i -= moves[m, 0]
        j -= moves[m, 1]
        path_i.append(i)
        path_j.append(j)
    return np.array(path_i[::-1], dtype=np.float64), np.array(path_j[::-1], dtype=np.float64)


def _apply_gamma(q: np.ndarray, path_t: np.ndarray, path_g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate ``(q o g) sqrt(g')`` at integer grid points for a piecewise-linear ``g``."""
    n = len(q)
    t = np.arange(n, dtype=float)
    g = np.interp(t, path_t, path_g)
    seg = np.clip(np.searchsorted(path_t, t, side="right") - 1, 0, len(path_t) - 2)
    slope = (path_g[seg + 1] - path_g[seg]) / (path_t[seg + 1] - path_t[seg])
    f = np.floor(g)
    a = (g - f)[:, None]
    i0 = f.astype(int) % n
    qg = (1 - a) * q[i0] + a * q[(i0 + 1) % n]
    return qg * np.sqrt(slope)[:, None], g, slope


def _procrustes(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Rotation ``O`` in SO(2) maximising ``<q1, O q2>``."""
    a = q1.T @ q2
    u, _, vt = np.linalg.svd(a)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, d]) @ vt


def _seed_scores(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Best rotated inner product for every cyclic shift ``k`` of ``q2``."""
    n = len(q1)
    f1 = np.conj(np.fft.fft(q1, axis=0))
    f2 = np.fft.fft(q2, axis=0)
    # c[a][b][k] = (1/N) sum_i q1[i, a] q2[i + k, b]
    c = [[np.fft.ifft(f1[:, a] * f2[:, b]).real / n for b in range(2)] for a in range(2)]
    return np.hypot(c[0][0] + c[1][1], c[1][0] - c[0][1])


class Registration(NamedTuple):
    """Optimal group action taking ``q2`` onto ``q1``.

    ``q2_registered[i] = rotation @ q2(seed + gamma[i]) * sqrt(gamma_slope[i])``
    with ``gamma`` an increasing index map (in samples, ``q2`` read
    cyclically) and ``gamma_slope`` its derivative. ``inner`` is the
    inner product with ``q1`` after rescaling to unit norm.
    """

    rotation: np.ndarray
    gamma: np.ndarray
    seed: int
    q2_registered: Srvf
    inner: float
    gamma_slope: np.ndarray


def _register_from_seed(q1, q2, seed, rounds, use_dp):
    n = len(q1)
    qs = np.roll(q2, -seed, axis=0)
    rot = _procrustes(q1, qs)
    ident = np.arange(n, dtype=float)
    best = (inner(q1, qs @ rot.T), rot, ident, np.ones(n))
    if not use_dp:
        return best
    # anchor the lattice at the best pointwise match so the result does not
    # depend on where either curve's sample 0 happens to sit
    band = max(DP_NEIGHBOURHOOD, int(np.ceil(DP_BAND * n)))
    anchor = int(np.argmax(np.sum(q1 * (qs @ rot.T), axis=1)))
    a1 = np.roll(q1, -anchor, axis=0)
    b1 = np.roll(qs, -anchor, axis=0)
    prev = best[0]
    for _ in range(rounds):
        pt, pg = _dp(np.ascontiguousarray(a1), np.ascontiguousarray(b1 @ rot.T), _MOVES, band)
        _, g, slope = _apply_gamma(b1, pt, pg)
        cands = [(g, slope)]
        if WARP_SMOOTH > 0:
            cands.append(_smooth_warp(pg, pt, n))
        val = -np.inf
        for gc, sc in cands:
            bg = _warp(b1, gc, sc)
            r = _procrustes(a1, bg)
            v = inner(a1, bg @ r.T) / _norm(bg)
            if v > val:
                val, rot_new, g_best, s_best = v, r, gc, sc
        rot = rot_new
        if val > best[0]:
            # back to q1's indexing: h(i) = anchor + g((i - anchor) mod N), unwrapped
            h = np.roll(g_best, anchor) + anchor
            h[:anchor] -= n
            best = (val, rot, h, np.roll(s_best, anchor))
        if abs(val - prev) < 1e-8:
            break
        prev = val
    return best


def _smooth_warp(path_g, path_t, n):
    """Gaussian-smooth the increments of a lattice warp; keeps g(0) = 0 and g(N) = N."""
    g = np.interp(np.arange(n + 1, dtype=float), path_t, path_g)
    d = ndimage.gaussian_filter1d(np.diff(g), WARP_SMOOTH, mode="wrap")
    gs = np.concatenate([[0.0], np.cumsum(d)])[:n]
    slope = 0.5 * (d + np.roll(d, 1))
    return gs, slope


def _warp(q: np.ndarray, h: np.ndarray, slope: np.ndarray) -> np.ndarray:
    n = len(q)
    f = np.floor(h)
    a = (h - f)[:, None]
    i0 = f.astype(int) % n
    return ((1 - a) * q[i0] + a * q[(i0 + 1) % n]) * np.sqrt(slope)[:, None]


def register(q1: Srvf, q2: Srvf, *, rounds: int = 3, n_seeds: int = 1, use_dp: bool = True) -> Registration:
    """Align ``q2`` to ``q1`` over rotation, cyclic seed and reparameterisation.

    Every cyclic seed is scored by its Procrustes-optimal inner product (an
    FFT cross-correlation); the ``n_seeds`` best are refined by alternating
    dynamic-programming reparameterisation and Procrustes rotation for up to
    ``rounds`` rounds. The result with the largest inner product is kept,
    including the unwarped alignment, and the registered SRVF is rescaled to
    unit norm.
    """
    a, b = q1.samples, q2.samples
    if len(a) != len(b):
        raise ValueError(f"SRVFs must share N, got {len(a)} and {len(b)}")
    scores = _seed_scores(a, b)
    order = np.argsort(-scores, kind="stable")[: max(1, n_seeds)]
    results = [(_register_from_seed(a, b, int(k), rounds, use_dp), int(k)) for k in order]
    (val, rot, h, slope), seed = max(results, key=lambda r: r[0][0])
    qr = _warp(np.roll(b, -seed, axis=0), h, slope) @ rot.T
    qr = qr / _norm(qr)
    return Registration(rot, h, seed, Srvf(qr), float(np.clip(inner(a, qr), -1.0, 1.0)), slope)


def _as_srvf(x, n: int) -> Srvf:
    if isinstance(x, Srvf):
        return x.normalized()
    c = x if isinstance(x, Contour) else Contour(x)
    if c.n != n:
        c = c.resample(n)
    return to_srvf(c)


def elastic_distance(c1, c2, *, n: int | None = None) -> float:
    """Geodesic shape distance ``arccos`` of the registered inner product, in ``[0, pi]``.

    Both curves are resampled to ``n`` points (default: the larger of the
    two point counts). Registration runs in both directions and the better
    alignment is used, which keeps the distance symmetric despite the
    discrete reparameterisation search.
    """
    if n is None:
        n = max(len(c1.samples) if isinstance(c1, Srvf) else len(c1), len(c2.samples) if isinstance(c2, Srvf) else len(c2))
    q1, q2 = _as_srvf(c1, n), _as_srvf(c2, n)
    ip = max(register(q1, q2).inner, register(q2, q1).inner)
    return float(np.arccos(np.clip(ip, -1.0, 1.0)))


# -- sphere geometry ------------------------------------------------------------------

def _arr(x) -> np.ndarray:
    return x.samples if isinstance(x, Srvf) else np.asarray(x, dtype=float)


def exp_map(base: Srvf, v) -> Srvf:
    """Great-circle exponential map on the unit sphere of SRVFs."""
    p = _arr(base)
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = unvectorize(v)
    nv = _norm(v)
    if nv < 1e-15:
        return Srvf(p)
    return Srvf(np.cos(nv) * p + np.sin(nv) * v / nv)


def inv_exp_map(base: Srvf, target: Srvf) -> np.ndarray:
    """Tangent vector at ``base`` pointing along the geodesic to ``target``."""
    p, q = _arr(base), _arr(target)
    c = float(np.clip(inner(p, q), -1.0, 1.0))
    theta = float(np.arccos(c))
    if theta > np.pi - ANTIPODAL_TOL:
        raise DegenerateShapeError("inverse exponential map undefined for antipodal shapes")
    if theta < 1e-12:
        return np.zeros_like(p)
    return (theta / np.sin(theta)) * (q - c * p)


def parallel_transport(v, start: Srvf, end: Srvf) -> np.ndarray:
    """Transport ``v`` from the tangent space at ``start`` to the one at ``end`` along the geodesic."""
    p, q = _arr(start), _arr(end)
    v = np.asarray(v, dtype=float)
    flat = v.ndim == 1
    if flat:
        v = unvectorize(v)
    c = inner(p, q)
    if 1.0 + c < ANTIPODAL_TOL:
        raise DegenerateShapeError("parallel transport undefined between antipodal points")
    out = v - (inner(v, q) / (1.0 + c)) * (p + q)
    return vectorize(out) if flat else out


# -- Karcher mean ---------------------------------------------------------------------

class KarcherResult(NamedTuple):
    mean: Srvf
    iterations: int
    converged: bool
    history: list


def karcher_mean(
    shapes: Sequence[Srvf],
    max_iter: int = 50,
    tol: float = 1e-5,
    step: float = 0.5,
    *,
    patience: int = 5,
) -> KarcherResult:
    """Intrinsic mean on shape space by gradient steps along the exponential map.

    Iteration starts from the medoid under rigid (rotation and seed)
    alignment: averaging unwarped shapes first blurs corresponding features,
    and every shape then warps toward the blur so the elastic tangent mean
    nearly vanishes away from the true mean. Because the discrete warp
    search makes the tangent mean noisy at the 1e-3 level, the iterate with
    the smallest sum of squared distances is kept and iteration stops after
    ``patience`` steps without improvement. ``converged`` reports whether
    the mean tangent norm met ``tol``; otherwise the best iterate is
    returned and a warning logged. ``iterations`` counts tangent
    evaluations up to the returned iterate, so identical shapes report 1.
    """
    if len(shapes) == 0:
        raise ValueError("karcher_mean needs at least one shape")
    qs = [s.normalized() for s in shapes]
    rigid = np.array([[0.0 if i == j else np.arccos(np.clip(np.max(_seed_scores(a.samples, b.samples)), -1, 1)) ** 2
                       for j, b in enumerate(qs)] for i, a in enumerate(qs)])
    mu = qs[int(np.argmin(rigid.sum(axis=1)))]
    history = []
    best = (np.inf, mu, np.inf, 0)
    stale = 0
    for it in range(max_iter):
        vs = [inv_exp_map(mu, register(mu, q).q2_registered) for q in qs]
        vbar = np.mean(vs, axis=0)
        cost = sum(_norm(v) ** 2 for v in vs)
        nv = _norm(vbar)
        history.append(nv)
        if nv < tol:
            return KarcherResult(mu, it + 1, True, history)
        if cost < best[0] - 1e-12:
            best, stale = (cost, mu, nv, it), 0
        else:
            stale += 1
            if stale >= patience:
                break
        mu = exp_map(mu, step * vbar).normalized()
    log.warning("Karcher mean stopped at |v| = %.3g (tol %.1g); returning the best iterate", best[2], tol)
    return KarcherResult(best[1], best[3] + 1, False, history)


# -- shape prior ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShapePrior:
    """Tangent-PCA shape model at the Karcher mean.

    ``basis`` holds ``J`` orthonormal columns in the vectorised tangent
    space (length ``2N``), ``eigenvalues`` the matching variances.
    """

    mean: Srvf
    basis: np.ndarray
    eigenvalues: np.ndarray
    delta: float
    mean_curve: Contour | None = None

    def __post_init__(self):
        u = np.array(self.basis, dtype=float, copy=True)
        lam = np.array(self.eigenvalues, dtype=float, copy=True)
        if u.ndim != 2 or u.shape[0] != 2 * self.mean.n or u.shape[1] != len(lam):
            raise ValueError("basis must be (2N, J) with one eigenvalue per column")
        if len(lam) == 0 or np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be positive and nonincreasing")
        if not 0 < self.delta < lam[-1]:
            raise ValueError("delta must lie in (0, smallest eigenvalue)")
        u.flags.writeable = False
        lam.flags.writeable = False
        object.__setattr__(self, "basis", u)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def n(self) -> int:
        return self.mean.n

    @property
    def j(self) -> int:
        return len(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "N": self.n,
            "J": self.j,
            "mean": self.mean.samples.tolist(),
            "basis": self.basis.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "delta": self.delta,
            "mean_curve": None if self.mean_curve is None else self.mean_curve.points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ShapePrior:
        mc = d.get("mean_curve")
        return cls(
            Srvf(np.asarray(d["mean"])), np.asarray(d["basis"]), np.asarray(d["eigenvalues"]), float(d["delta"]),
            None if mc is None else Contour(mc, orient=False),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> ShapePrior:
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_prior(
    training: Sequence[Contour],
    j: int | None = None,
    *,
    variance_fraction: float = 0.95,
    n: int = DEFAULT_N,
    max_iter: int = 50,
) -> ShapePrior:
    """Karcher mean plus tangent PCA of the training shapes.

    Parameters
    ----------
    training : sequence of Contour
        At least two curves; each is resampled to ``n`` points.
    j : int, optional
        Number of retained directions. When omitted the smallest ``J``
        explaining ``variance_fraction`` of the variance is used.
    """
    if len(training) < 2:
        raise ValueError("fit_prior needs at least 2 training contours")
    qs = [to_srvf(c.resample(n)) for c in training]
    raw = karcher_mean(qs, max_iter=max_iter).mean
    # the sample mean need not be the SRVF of a closed curve: close it and
    # take the SRVF of that curve so the mean shape is exactly representable
    curve = from_srvf(raw, close=True)
    curve = Contour((curve.points - curve.centroid) / curve.length, orient=False)
    mean = to_srvf(curve)
    w = np.array([vectorize(inv_exp_map(mean, register(mean, q).q2_registered)) for q in qs])
    m = len(w)
    _, s, vt = np.linalg.svd(w, full_matrices=False)
    lam = s**2 / (m - 1)
    # closing the mean moves it slightly, so identical shapes give equal but
    # nonzero tangents; test their spread rather than their size
    if np.max(np.linalg.norm(w - w.mean(axis=0), axis=1)) < 1e-6:
        raise DegenerateShapeError("training shapes have no variance; cannot fit a prior")
    rank = int(np.sum(lam > 1e-12 * lam[0]))
    rank = min(rank, m - 1)
    if j is None:
        frac = np.cumsum(lam[:rank]) / lam[:rank].sum()
        j = int(np.searchsorted(frac, variance_fraction - 1e-12) + 1)
    j = max(1, min(int(j), rank))
    lam = lam[:j]
    return ShapePrior(mean, vt[:j].T, lam, 0.5 * float(lam[-1]), curve)


def _shape_coords(prior: ShapePrior, c: Contour) -> tuple[np.ndarray, Registration]:
    q = to_srvf(c if c.n == prior.n else c.resample(prior.n))
    # a single seed leaves the prior energy visibly discontinuous in c
    reg = register(prior.mean, q, n_seeds=PRIOR_SEEDS)
    return vectorize(inv_exp_map(prior.mean, reg.q2_registered)), reg


def _energy_w(prior: ShapePrior, w: np.ndarray) -> float:
    u, lam = prior.basis, prior.eigenvalues
    a = u.T @ w
    resid = w - u @ a
    return float(0.5 * np.sum(a * a / lam) + 0.5 * np.dot(resid, resid) / prior.delta**2)


def prior_gradient(prior: ShapePrior, w: np.ndarray) -> np.ndarray:
    """``(U S^-1 U^T + (I - U U^T) / delta^2) w``, the gradient of the prior energy in ``w``."""
    u, lam = prior.basis, prior.eigenvalues
    a = u.T @ w
    return u @ (a / lam) + (w - u @ a) / prior.delta**2


def prior_energy(prior: ShapePrior, c: Contour) -> float:
    """Mahalanobis-type energy of ``c``'s tangent coordinates at the prior mean."""
    w, _ = _shape_coords(prior, c)
    return _energy_w(prior, w)


class PriorUpdate(NamedTuple):
    direction: np.ndarray
    beta_new: Contour


def _unregister(points: np.ndarray, reg: Registration) -> np.ndarray:
    """Map a curve in the registered frame back onto the original parameterisation."""
    n = len(points)
    h = reg.gamma + reg.seed  # registered index -> original index (unwrapped)
    h = np.append(h, h[0] + n)
    idx = np.arange(n + 1, dtype=float)
    s = h[0] + (np.arange(n) - h[0]) % n
    i = np.interp(s, h, idx)
    closed = np.vstack([points, points[:1]])
    x = np.interp(i, idx, closed[:, 0])
    y = np.interp(i, idx, closed[:, 1])
    return np.column_stack([x, y]) @ reg.rotation


def _match_frame(pts: np.ndarray, c: Contour) -> np.ndarray:
    tmp = Contour(pts, orient=False)
    scaled = (pts - tmp.centroid) * (c.length / tmp.length)
    return scaled + c.centroid


def prior_update_direction(
    prior: ShapePrior, c: Contour, eps: float = 0.3, *, max_step: float | None = None
) -> PriorUpdate:
    """Per-point update moving ``c`` one prior step towards the mean shape.

    The gradient ``a`` at the mean is transported to the tangent space at
    ``c``'s registered shape and a geodesic step of length ``eps * |a|`` is
    taken against it. The length is capped at ``max_step``, by default the
    exact minimiser of the (quadratic) energy along ``-a``, since the
    ``1/delta^2`` term otherwise produces steps far past the mean.
    The stepped shape is integrated, mapped back to ``c``'s
    parameterisation, rescaled and re-centred to ``c``'s length and centroid.
    The returned direction is ``(beta_0 - beta_new) / eps`` where ``beta_0`` is
    the zero-step reconstruction, so it vanishes exactly at the mean.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    n = prior.n
    cc = c if c.n == n else c.resample(n)
    w, reg = _shape_coords(prior, cc)
    qstar = reg.q2_registered
    grad = prior_gradient(prior, w)
    b = parallel_transport(unvectorize(grad), prior.mean, qstar)
    nb_ = _norm(b)
    if max_step is None:
        # the energy is quadratic in w: never step past its minimiser along -grad
        u, lam = prior.basis, prior.eigenvalues
        ua = u.T @ grad
        curv = np.sum(ua * ua / lam) + (np.dot(grad, grad) - np.dot(ua, ua)) / prior.delta**2
        max_step = float(np.dot(grad, grad) / curv * np.linalg.norm(grad)) if curv > 0 else 0.0
    length = min(eps * nb_, max_step)
    step = -(length / nb_) * b if nb_ > 1e-15 else np.zeros_like(b)
    q_new = exp_map(qstar, step).normalized()
    base = _match_frame(_unregister(from_srvf(qstar, close=True).points, reg), cc)
    new = _match_frame(_unregister(from_srvf(q_new, close=True).points, reg), cc)
    return PriorUpdate((base - new) / eps, Contour(new, orient=False))


def unit_circle_srvf(n: int = DEFAULT_N) -> Srvf:
    return to_srvf(circle((0.0, 0.0), 1.0, n))
