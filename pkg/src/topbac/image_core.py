"""Grayscale images, pixel regions, file I/O and contour rasterisation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .contour import Contour, segment_intersections, signed_area

__all__ = [
    "GrayImage",
    "PixelRegion",
    "ImageFormatError",
    "SelfIntersectionError",
    "load_image",
    "save_image",
    "rasterize_interior",
    "rasterize_even_odd",
]

log = logging.getLogger(__name__)


class ImageFormatError(ValueError):
    """Unreadable or unsupported image file."""


class SelfIntersectionError(ValueError):
    def __init__(self, pairs):
        self.pairs = list(pairs)
        shown = ", ".join(f"({i}, {j})" for i, j in self.pairs[:5])
        more = "" if len(self.pairs) <= 5 else f" and {len(self.pairs) - 5} more"
        super().__init__(f"contour self-intersects at segment pairs {shown}{more}")


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale intensities in [0, 1], stored as a read-only ``(height, width)`` array."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            log.warning("image values outside [0, 1] (%.4g, %.4g) clipped", v.min(), v.max())
            v = np.clip(v, 0.0, 1.0)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PixelRegion:
    """Boolean membership mask of shape ``(height, width)``."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool, copy=True)
        if m.ndim != 2:
            raise ValueError(f"region mask must be 2-D, got shape {m.shape}")
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def __eq__(self, other):
        return isinstance(other, PixelRegion) and np.array_equal(self.mask, other.mask)

    __hash__ = None

    def complement(self) -> PixelRegion:
        return PixelRegion(~self.mask)

    def save_png(self, path) -> None:
        Image.fromarray(np.where(self.mask, 255, 0).astype(np.uint8), mode="L").save(path)


# -- file I/O ---------------------------------------------------------------

def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"{path}: not a grayscale PGM (magic {magic!r})")
    # header: magic, width, height, maxval separated by whitespace/comments
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError(f"{path}: truncated PGM header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    width, height, maxval = fields
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: unsupported PGM maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        count = width * height
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos) if len(
            data
        ) - pos >= count * dtype.itemsize else None
        if raw is None:
            raise ImageFormatError(f"{path}: truncated PGM raster")
    else:
        tokens = data[pos:].split()
        if len(tokens) < width * height:
            raise ImageFormatError(f"{path}: truncated PGM raster")
        raw = np.array([int(t) for t in tokens[: width * height]])
    return raw.reshape(height, width).astype(float), maxval


def load_image(path) -> GrayImage:
    """Load an 8- or 16-bit grayscale PGM or PNG, rescaled linearly to [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"{path}: no such file")
    if path.suffix.lower() in (".pgm", ".pnm"):
        arr, maxval = _read_pgm(path)
        return GrayImage(arr / maxval)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "1":
                im = im.convert("L")
                mode = "L"
            arr = np.array(im)
    except ImageFormatError:
        raise
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    if mode == "L":
        return GrayImage(arr.astype(float) / 255.0)
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        if arr.min() < 0 or arr.max() > 65535:
            raise ImageFormatError(f"{path}: unsupported bit depth for mode {mode}")
        return GrayImage(arr.astype(float) / 65535.0)
    raise ImageFormatError(f"{path}: unsupported image mode {mode!r} (grayscale 8/16-bit only)")


def _quantize8(values: np.ndarray) -> np.ndarray:
    # round half up
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: GrayImage, path) -> None:
    """Write 8-bit PNG, or binary PGM when the suffix is ``.pgm``."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"{path.parent}: directory does not exist")
    q = _quantize8(img.values)
    if path.suffix.lower() in (".pgm", ".pnm"):
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + q.tobytes())
    else:
        Image.fromarray(q, mode="L").save(path)


# -- rasterisation ------------------------------------------------------------

def _scanline_fill(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd fill on pixel centres; pixels lying on an edge are members."""
    mask = np.zeros((height, width), dtype=bool)
    p0 = points
    p1 = np.roll(points, -1, axis=0)
    ymin, ymax = points[:, 1].min(), points[:, 1].max()
    r0 = max(int(np.ceil(ymin)), 0)
    r1 = min(int(np.floor(ymax)), height - 1)
    if r0 <= r1:
        rows = np.arange(r0, r1 + 1, dtype=float)
        y0, y1 = p0[:, 1][:, None], p1[:, 1][:, None]
        x0, x1 = p0[:, 0][:, None], p1[:, 0][:, None]
        yy = rows[None, :]
        # half-open rule so shared vertices are counted once
        hit = ((y0 <= yy) & (yy < y1)) | ((y1 <= yy) & (yy < y0))
        ei, ri = np.nonzero(hit)
        if len(ei):
            xa, xb = x0[ei, 0], x1[ei, 0]
            ya, yb = y0[ei, 0], y1[ei, 0]
            xs = xa + (rows[ri] - ya) * (xb - xa) / (yb - ya)
            order = np.lexsort((xs, ri))
            xs, ri = xs[order], ri[order]
            left, right = xs[0::2], xs[1::2]
            row = ri[0::2]
            lo = np.maximum(np.ceil(left - 1e-9).astype(int), 0)
            hi = np.minimum(np.floor(right + 1e-9).astype(int), width - 1)
            ok = lo <= hi
            diff = np.zeros((r1 - r0 + 1, width + 1), dtype=np.int32)
            np.add.at(diff, (row[ok], lo[ok]), 1)
            np.add.at(diff, (row[ok], hi[ok] + 1), -1)
            mask[r0 : r1 + 1] = np.cumsum(diff[:, :width], axis=1) > 0
    # boundary pixels the scanline rule can miss: vertices and horizontal edges
    vx, vy = points[:, 0], points[:, 1]
    on_grid = (vx == np.round(vx)) & (vy == np.round(vy))
    vx_i, vy_i = vx[on_grid].astype(int), vy[on_grid].astype(int)
    inside = (vx_i >= 0) & (vx_i < width) & (vy_i >= 0) & (vy_i < height)
    mask[vy_i[inside], vx_i[inside]] = True
    horiz = (p0[:, 1] == p1[:, 1]) & (p0[:, 1] == np.round(p0[:, 1]))
    for a, b in zip(p0[horiz], p1[horiz]):
        r = int(a[1])
        if 0 <= r < height:
            lo = max(int(np.ceil(min(a[0], b[0]))), 0)
            hi = min(int(np.floor(max(a[0], b[0]))), width - 1)
            if lo <= hi:
                mask[r, lo : hi + 1] = True
    return mask


def rasterize_interior(c: Contour, width: int, height: int, *, check_simple: bool = True) -> PixelRegion:
    """Pixels whose centre lies inside ``c`` (even-odd rule, edges inclusive).

    Raises :class:`SelfIntersectionError` for non-simple contours unless
    ``check_simple`` is False, in which case the even-odd fill is still used.
    """
    pts = c.points if isinstance(c, Contour) else np.asarray(c, dtype=float)
    if check_simple:
        pairs = segment_intersections(pts)
        if pairs:
            raise SelfIntersectionError(pairs)
    if abs(signed_area(pts)) < 1e-12:
        return PixelRegion(np.zeros((height, width), dtype=bool))
    return PixelRegion(_scanline_fill(pts, width, height))


def rasterize_even_odd(contours, width: int, height: int, *, check_simple: bool = False) -> PixelRegion:
    """XOR of the rasterised interiors of several contours (holes cancel)."""
    mask = np.zeros((height, width), dtype=bool)
    for c in contours:
        mask ^= rasterize_interior(c, width, height, check_simple=check_simple).mask
    return PixelRegion(mask)
