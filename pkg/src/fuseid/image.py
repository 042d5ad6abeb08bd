"""Grayscale image loading and preprocessing.

Images are plain 2-D ``numpy.uint8`` arrays (row-major, shape ``(h, w)``).
Binary PGM (P5, maxval 255) is the native format and round-trips
bit-exactly; anything else is decoded through Pillow and reduced to
luminance with the Rec.601 weights.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ImageError(ValueError):
    """Unreadable file, unsupported format, or invalid image geometry."""


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ImageError("expected a 2-D uint8 grayscale image")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError("zero-dimension image")
    return img


# ---------------------------------------------------------------------------
# PGM / generic loading

def load_pgm(path: str | os.PathLike) -> np.ndarray:
    """Decode a binary PGM (P5) file with maxval 255."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageError(f"unreadable file: {path}: {exc}") from exc
    if not data.startswith(b"P5"):
        raise ImageError(f"unsupported format (expected binary PGM 'P5'): {path}")

    # Header is three whitespace-separated tokens after the magic; '#'
    # starts a comment running to end of line.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise ImageError(f"unreadable file (truncated PGM header): {path}")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError(f"unreadable file (truncated PGM header): {path}")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError as exc:
            raise ImageError(f"unreadable file (bad PGM header): {path}") from exc
    pos += 1  # single whitespace byte between maxval and raster

    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise ImageError(f"zero-dimension image: {path}")
    if maxval != 255:
        raise ImageError(f"unsupported format (PGM maxval must be 255): {path}")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ImageError(f"unreadable file (truncated PGM raster): {path}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write a binary PGM (P5, maxval 255); load_pgm inverts it bit-exactly."""
    img = _check_image(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load a raster image as grayscale.

    PGM is decoded natively; other formats go through Pillow. Color
    inputs are converted with the Rec.601 luminance weighting
    (0.299 R + 0.587 G + 0.114 B, rounded to nearest).
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageError(f"unreadable file: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return load_pgm(path)

    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is a hard dep
        raise ImageError(f"unsupported format (Pillow unavailable): {path}") from exc
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
                arr = np.rint(luma).clip(0, 255).astype(np.uint8)
    except ImageError:
        raise
    except Exception as exc:
        raise ImageError(f"unreadable file: {path}: {exc}") from exc
    return _check_image(arr)


# ---------------------------------------------------------------------------
# Geometry

def resize(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear resize with aligned-corner sampling.

    Output pixel (i, j) samples the source at
    ``(i*(h-1)/(th-1), j*(w-1)/(tw-1))``, so resizing to the source
    dimensions reproduces the source bit-exactly.
    """
    img = _check_image(img)
    if target_w < 1 or target_h < 1:
        raise ImageError("zero target dimension")
    h, w = img.shape

    xs = np.linspace(0.0, w - 1.0, target_w) if target_w > 1 else np.zeros(1)
    ys = np.linspace(0.0, h - 1.0, target_h) if target_h > 1 else np.zeros(1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0

    src = img.astype(np.float64)
    rows = src[y0, :] * (1.0 - fy)[:, None] + src[y1, :] * fy[:, None]
    out = rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]
    return np.rint(out).clip(0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Contrast-limited adaptive histogram equalization

def _tile_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    """Equalization lookup table for one tile.

    The histogram is clipped at ``clip_limit`` times the tile pixel count
    and the excess is redistributed uniformly over the occupied value
    span, then mapped through the cdf anchored at the lowest occupied
    bin. A constant tile maps through identity.
    """
    lo = int(tile.min())
    hi = int(tile.max())
    if lo == hi:
        return np.arange(256, dtype=np.float64)

    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    limit = clip_limit * tile.size
    excess = np.maximum(hist - limit, 0.0).sum()
    if excess > 0.0:
        hist = np.minimum(hist, limit)
        hist[lo : hi + 1] += excess / (hi - lo + 1)

    cdf = np.cumsum(hist)
    anchor = cdf[lo]
    lut = 255.0 * np.maximum(cdf - anchor, 0.0) / (cdf[-1] - anchor)
    return lut


def adaptive_hist_eq(
    img: np.ndarray,
    tile_grid: tuple[int, int] = (8, 8),
    clip_limit: float = 0.01,
) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization (CLAHE).

    Per-tile clipped equalization with bilinear blending between tile
    centers. Dimensions are preserved, constant images stay constant,
    and the output dynamic range (max-min) never shrinks.
    """
    img = _check_image(img)
    rows, cols = tile_grid
    h, w = img.shape
    if rows < 1 or cols < 1 or h // rows < 8 or w // cols < 8:
        raise ImageError(
            f"degenerate tile grid {tile_grid} for {w}x{h} image (tiles below 8 px)"
        )
    if not 0.0 < clip_limit <= 1.0:
        raise ImageError(f"clip limit {clip_limit} outside (0, 1]")

    y_edges = [round(i * h / rows) for i in range(rows + 1)]
    x_edges = [round(j * w / cols) for j in range(cols + 1)]
    luts = np.empty((rows, cols, 256), dtype=np.float64)
    y_centers = np.empty(rows)
    x_centers = np.empty(cols)
    for r in range(rows):
        y_centers[r] = 0.5 * (y_edges[r] + y_edges[r + 1] - 1)
        for c in range(cols):
            x_centers[c] = 0.5 * (x_edges[c] + x_edges[c + 1] - 1)
            tile = img[y_edges[r] : y_edges[r + 1], x_edges[c] : x_edges[c + 1]]
            luts[r, c] = _tile_lut(tile, clip_limit)

    def _axis_blend(coords: np.ndarray, centers: np.ndarray):
        # index of the upper neighboring tile center plus blend weight;
        # pixels beyond the outermost centers clamp to the edge tile
        hi = np.searchsorted(centers, coords).clip(0, len(centers) - 1)
        lo = np.maximum(hi - 1, 0)
        span = centers[hi] - centers[lo]
        frac = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1), 0.0)
        return lo, hi, np.clip(frac, 0.0, 1.0)

    r0, r1, wy = _axis_blend(np.arange(h, dtype=np.float64), y_centers)
    c0, c1, wx = _axis_blend(np.arange(w, dtype=np.float64), x_centers)

    ridx0 = r0[:, None]
    ridx1 = r1[:, None]
    cidx0 = c0[None, :]
    cidx1 = c1[None, :]
    wy = wy[:, None]
    wx = wx[None, :]
    out = (
        luts[ridx0, cidx0, img] * (1 - wy) * (1 - wx)
        + luts[ridx0, cidx1, img] * (1 - wy) * wx
        + luts[ridx1, cidx0, img] * wy * (1 - wx)
        + luts[ridx1, cidx1, img] * wy * wx
    )
    return np.rint(out).clip(0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Ear localization

@dataclass(frozen=True)
class EarLandmarks:
    """Two manually annotated ear points read from a sidecar file."""

    triangular_fossa: tuple[int, int]
    antitragus: tuple[int, int]

    def validate(self, img: np.ndarray) -> None:
        h, w = img.shape
        for name, (x, y) in (
            ("triangular_fossa", self.triangular_fossa),
            ("antitragus", self.antitragus),
        ):
            if not (0 <= x < w and 0 <= y < h):
                raise ImageError(f"landmark {name} ({x}, {y}) outside {w}x{h} image")
        if self.triangular_fossa == self.antitragus:
            raise ImageError("ear landmarks must be distinct points")


def load_landmarks(path: str | os.PathLike) -> EarLandmarks:
    """Parse a landmark sidecar: one line ``tf_x tf_y at_x at_y``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ImageError(f"unreadable landmark file: {path}: {exc}") from exc
    fields = text.split()
    if len(fields) != 4:
        raise ImageError(f"landmark file must hold 4 integers, got {len(fields)}: {path}")
    try:
        tfx, tfy, atx, aty = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageError(f"non-integer landmark coordinate in {path}") from exc
    return EarLandmarks((tfx, tfy), (atx, aty))


def write_landmarks(lm: EarLandmarks, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            "%d %d %d %d\n"
            % (
                lm.triangular_fossa[0],
                lm.triangular_fossa[1],
                lm.antitragus[0],
                lm.antitragus[1],
            )
        )


def crop_ear(img: np.ndarray, landmarks: EarLandmarks, margin: float = 0.25) -> np.ndarray:
    """Crop the landmark bounding box expanded by ``margin`` per side.

    The expansion is ``margin`` times the box width/height, clamped to
    the image bounds.
    """
    img = _check_image(img)
    landmarks.validate(img)
    if margin < 0:
        raise ImageError("margin must be non-negative")
    h, w = img.shape
    (tfx, tfy), (atx, aty) = landmarks.triangular_fossa, landmarks.antitragus
    x_min, x_max = min(tfx, atx), max(tfx, atx)
    y_min, y_max = min(tfy, aty), max(tfy, aty)
    dx = round((x_max - x_min) * margin)
    dy = round((y_max - y_min) * margin)
    x0 = max(x_min - dx, 0)
    y0 = max(y_min - dy, 0)
    x1 = min(x_max + dx, w - 1)
    y1 = min(y_max + dy, h - 1)
    if x1 < x0 or y1 < y0:
        raise ImageError("ear crop collapsed to zero area")
    return img[y0 : y1 + 1, x0 : x1 + 1].copy()
