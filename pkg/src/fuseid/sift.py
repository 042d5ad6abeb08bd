"""Scale Invariant Feature Transform, implemented from scratch.

The four classic stages: difference-of-Gaussian scale-space extrema,
sub-pixel localization with contrast and edge-response rejection,
gradient-histogram orientation assignment, and a 4x4x8 trilinearly
interpolated descriptor normalized to unit length.

Images enter as 2-D uint8 arrays and are converted to float32 luminance
in [0, 1]; the contrast threshold is defined on that range. Keypoint
coordinates, scales and orientations are reported in input-image units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

# Sensor blur assumed present in the input before the first octave is built.
ASSUMED_BLUR = 0.5
MIN_IMAGE_SIDE = 16

ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0

DESC_CELLS = 4
DESC_ORI_BINS = 8
DESC_CELL_WIDTH_FACTOR = 3.0
DESC_CLAMP = 0.2

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SiftParams:
    """Detector knobs; defaults follow the standard reference detector."""

    octaves: int = 4
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio_threshold: float = 10.0

    def __post_init__(self) -> None:
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if self.base_sigma <= 0:
            raise ValueError("base_sigma must be positive")
        if self.contrast_threshold <= 0:
            raise ValueError("contrast_threshold must be positive")
        if self.edge_ratio_threshold <= 1:
            raise ValueError("edge_ratio_threshold must be > 1")


@dataclass(eq=False)
class Keypoint:
    """One SIFT feature in input-image coordinates.

    Coordinate fields are float32-rounded at construction so they
    serialize losslessly; the descriptor is a unit-norm float32 vector
    of length 128 (all-zero only for a zero-gradient patch).
    """

    x: float
    y: float
    scale: float
    orientation: float
    descriptor: np.ndarray

    def __post_init__(self) -> None:
        self.x = float(np.float32(self.x))
        self.y = float(np.float32(self.y))
        self.scale = float(np.float32(self.scale))
        self.orientation = float(np.float32(self.orientation))
        self.descriptor = np.asarray(self.descriptor, dtype=np.float32)
        if self.descriptor.shape != (128,):
            raise ValueError("descriptor must have exactly 128 elements")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Keypoint):
            return NotImplemented
        return (
            self.x == other.x
            and self.y == other.y
            and self.scale == other.scale
            and self.orientation == other.orientation
            and np.array_equal(self.descriptor, other.descriptor)
        )


@dataclass
class FeatureSet:
    """Keypoints of one modality, all in the source image's frame."""

    modality: str
    source_id: str
    keypoints: list[Keypoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.keypoints)


class ScaleSpace:
    """Per-octave Gaussian stacks and their DoG differences.

    Each octave holds ``scales_per_octave + 3`` Gaussian levels and
    ``scales_per_octave + 2`` DoG levels; octave o is the previous one
    decimated by 2.
    """

    def __init__(self, gaussians: list[np.ndarray], params: SiftParams):
        self.gaussians = gaussians
        self.dogs = [g[1:] - g[:-1] for g in gaussians]
        self.params = params
        s = params.scales_per_octave
        # octave-relative absolute blur of each level
        self.level_sigmas = params.base_sigma * 2.0 ** (np.arange(s + 3) / s)
        self._grad_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    @property
    def n_octaves(self) -> int:
        return len(self.gaussians)

    def gradients(self, octave: int, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Central-difference (gx, gy) of one Gaussian level, cached.

        Border rows/columns are zero; callers must restrict sampling to
        the interior.
        """
        key = (octave, level)
        if key not in self._grad_cache:
            g = self.gaussians[octave][level].astype(np.float64)
            gx = np.zeros_like(g)
            gy = np.zeros_like(g)
            gx[:, 1:-1] = 0.5 * (g[:, 2:] - g[:, :-2])
            gy[1:-1, :] = 0.5 * (g[2:, :] - g[:-2, :])
            self._grad_cache[key] = (gx, gy)
        return self._grad_cache[key]


def _octave_count(h: int, w: int, requested: int) -> int:
    n = 0
    side = min(h, w)
    while n < requested and side >= MIN_IMAGE_SIDE:
        n += 1
        side = (side + 1) // 2
    return n


def build_scale_space(img: np.ndarray, params: SiftParams) -> ScaleSpace:
    """Build the Gaussian/DoG pyramid for a uint8 grayscale image.

    The octave count is clamped so the coarsest octave keeps a minimum
    side of 16 pixels; an image smaller than 16x16 is rejected.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    h, w = img.shape
    if min(h, w) < MIN_IMAGE_SIDE:
        raise ValueError(f"image {w}x{h} too small for scale-space (min side 16)")

    base = img.astype(np.float32) / 255.0
    s = params.scales_per_octave
    sigmas = params.base_sigma * 2.0 ** (np.arange(s + 3) / s)
    increments = np.sqrt(np.maximum(sigmas[1:] ** 2 - sigmas[:-1] ** 2, 0.0))

    if params.base_sigma > ASSUMED_BLUR:
        pre = math.sqrt(params.base_sigma**2 - ASSUMED_BLUR**2)
        base = ndimage.gaussian_filter(base, pre, mode="nearest")

    n_oct = _octave_count(h, w, params.octaves)
    gaussians = []
    for _ in range(n_oct):
        levels = [base]
        for inc in increments:
            levels.append(ndimage.gaussian_filter(levels[-1], float(inc), mode="nearest"))
        stack = np.stack(levels)
        gaussians.append(stack)
        # level s carries blur 2*base_sigma; decimating it by 2 restores base_sigma
        base = stack[s][::2, ::2]
    return ScaleSpace(gaussians, params)


def detect_extrema(space: ScaleSpace) -> list[tuple[int, int, int, int]]:
    """All samples strictly above or below their 26 DoG neighbors.

    Returns (octave, level, x, y) tuples; candidates never sit on an
    image border or on the outermost DoG levels, where the 3x3x3
    neighborhood would be incomplete.
    """
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    out: list[tuple[int, int, int, int]] = []
    for o, dog in enumerate(space.dogs):
        if dog.shape[0] < 3 or dog.shape[1] < 3 or dog.shape[2] < 3:
            continue
        nb_max = ndimage.maximum_filter(dog, footprint=footprint, mode="constant", cval=np.inf)
        nb_min = ndimage.minimum_filter(dog, footprint=footprint, mode="constant", cval=-np.inf)
        mask = (dog > nb_max) | (dog < nb_min)
        mask[0], mask[-1] = False, False
        mask[:, 0], mask[:, -1] = False, False
        mask[:, :, 0], mask[:, :, -1] = False, False
        for lvl, y, x in np.argwhere(mask):
            out.append((o, int(lvl), int(x), int(y)))
    return out


@dataclass(frozen=True)
class RefinedPoint:
    """Sub-pixel localized candidate, prior to orientation assignment."""

    octave: int
    level: int
    level_offset: float
    x: float  # input-image units
    y: float
    sigma: float  # input-image units
    sigma_octave: float  # blur at the point's own octave resolution
    response: float


def _dog_derivatives(cube: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of a 3x3x3 DoG patch at its center.

    Axis order of the returned vectors/matrices is (x, y, level).
    """
    dx = 0.5 * (cube[1, 1, 2] - cube[1, 1, 0])
    dy = 0.5 * (cube[1, 2, 1] - cube[1, 0, 1])
    ds = 0.5 * (cube[2, 1, 1] - cube[0, 1, 1])
    c = cube[1, 1, 1]
    dxx = cube[1, 1, 2] - 2 * c + cube[1, 1, 0]
    dyy = cube[1, 2, 1] - 2 * c + cube[1, 0, 1]
    dss = cube[2, 1, 1] - 2 * c + cube[0, 1, 1]
    dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
    dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
    dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
    grad = np.array([dx, dy, ds])
    hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return grad, hess


def localize_keypoint(
    candidate: tuple[int, int, int, int],
    space: ScaleSpace,
    params: SiftParams,
    max_attempts: int = 5,
) -> RefinedPoint | None:
    """Quadratic sub-pixel refinement with contrast and edge rejection.

    Rejection is a normal outcome: low interpolated contrast, an edge
    response whose 2x2 spatial Hessian has trace^2/det above
    (r+1)^2 / r, a refinement that keeps drifting, or a singular fit.
    """
    octave, level, x, y = candidate
    dog = space.dogs[octave]
    n_levels, h, w = dog.shape

    offset = np.zeros(3)
    grad = np.zeros(3)
    converged = False
    for _ in range(max_attempts):
        cube = dog[level - 1 : level + 2, y - 1 : y + 2, x - 1 : x + 2].astype(np.float64)
        grad, hess = _dog_derivatives(cube)
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            converged = True
            break
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        level += int(round(offset[2]))
        if not (1 <= level <= n_levels - 2 and 1 <= y <= h - 2 and 1 <= x <= w - 2):
            return None
    if not converged:
        return None

    value = float(dog[level, y, x]) + 0.5 * float(grad @ offset)
    if abs(value) < params.contrast_threshold:
        return None

    spatial = hess[:2, :2]
    trace = spatial[0, 0] + spatial[1, 1]
    det = spatial[0, 0] * spatial[1, 1] - spatial[0, 1] * spatial[1, 0]
    r = params.edge_ratio_threshold
    if det <= 0 or trace * trace * r > (r + 1) ** 2 * det:
        return None

    scale_factor = float(2**octave)
    s = params.scales_per_octave
    level_float = level + float(offset[2])
    x_img = (x + float(offset[0])) * scale_factor
    y_img = (y + float(offset[1])) * scale_factor
    img_h = space.gaussians[0].shape[1]
    img_w = space.gaussians[0].shape[2]
    if not (0.0 <= x_img <= img_w - 1 and 0.0 <= y_img <= img_h - 1):
        return None
    sigma_octave = params.base_sigma * 2.0 ** (level_float / s)
    return RefinedPoint(
        octave=octave,
        level=level,
        level_offset=float(offset[2]),
        x=x_img,
        y=y_img,
        sigma=sigma_octave * scale_factor,
        sigma_octave=sigma_octave,
        response=abs(value),
    )


@dataclass(frozen=True)
class OrientedPoint:
    point: RefinedPoint
    orientation: float  # radians in [0, 2*pi)


def _window_gradients(
    space: ScaleSpace, point: RefinedPoint, radius: int, circular: bool
):
    """Gradient samples around a keypoint at its own octave resolution.

    Returns (gx, gy, rel_rows, rel_cols) 1-D arrays restricted to the
    image interior; samples falling outside are skipped, not reflected.
    """
    octave = point.octave
    level = int(round(point.level + point.level_offset))
    level = min(max(level, 0), space.gaussians[octave].shape[0] - 1)
    gx_img, gy_img = space.gradients(octave, level)
    h, w = gx_img.shape

    scale_factor = float(2**octave)
    xc = int(round(point.x / scale_factor))
    yc = int(round(point.y / scale_factor))

    rr, cc = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    rr = rr.ravel()
    cc = cc.ravel()
    py = yc + rr
    px = xc + cc
    valid = (py >= 1) & (py <= h - 2) & (px >= 1) & (px <= w - 2)
    if circular:
        valid &= rr * rr + cc * cc <= radius * radius
    rr, cc, py, px = rr[valid], cc[valid], py[valid], px[valid]
    return gx_img[py, px], gy_img[py, px], rr, cc


def assign_orientations(point: RefinedPoint, space: ScaleSpace) -> list[OrientedPoint]:
    """Dominant gradient directions from a 36-bin weighted histogram.

    The global maximum and every other strict local peak reaching 80% of
    it each yield one oriented point; peak angles are refined by
    parabolic interpolation. A zero-gradient window drops the point.
    """
    sigma_w = ORI_SIGMA_FACTOR * point.sigma_octave
    radius = max(int(round(ORI_RADIUS_FACTOR * sigma_w)), 1)
    gx, gy, rr, cc = _window_gradients(space, point, radius, circular=True)
    if gx.size == 0:
        return []

    mag = np.hypot(gx, gy)
    if not np.any(mag > 0):
        return []
    theta = np.mod(np.arctan2(gy, gx), TWO_PI)
    weight = np.exp(-(rr * rr + cc * cc) / (2.0 * sigma_w * sigma_w))
    bins = np.rint(theta * ORI_BINS / TWO_PI).astype(np.intp) % ORI_BINS
    hist = np.bincount(bins, weights=weight * mag, minlength=ORI_BINS)

    peak_max = hist.max()
    if peak_max <= 0:
        return []
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    is_peak = (hist > left) & (hist > right) & (hist >= ORI_PEAK_RATIO * peak_max)
    is_peak[int(np.argmax(hist))] = True  # dominant bin always yields a point

    out = []
    for b in np.flatnonzero(is_peak):
        denom = left[b] - 2.0 * hist[b] + right[b]
        shift = 0.5 * (left[b] - right[b]) / denom if denom != 0 else 0.0
        angle = ((b + shift) * TWO_PI / ORI_BINS) % TWO_PI
        out.append(OrientedPoint(point, float(angle)))
    return out


def _normalize_clamp(vec: np.ndarray, clamp: float = DESC_CLAMP) -> np.ndarray:
    """Unit-normalize, clamp each element at ``clamp``, renormalize.

    An all-zero vector stays all-zero (degenerate gradient-free patch).
    """
    norm = np.linalg.norm(vec)
    if norm == 0:
        return vec
    vec = np.minimum(vec / norm, clamp)
    norm = np.linalg.norm(vec)
    if norm == 0:  # pragma: no cover - clamp cannot zero a nonzero vector
        return vec
    return vec / norm


def compute_descriptor(oriented: OrientedPoint, space: ScaleSpace) -> np.ndarray:
    """4x4 spatial cells x 8 orientation bins, as a unit 128-vector.

    Gradients are rotated into the keypoint frame, spread with trilinear
    interpolation, Gaussian-weighted over the window, normalized,
    clamped at 0.2 and renormalized.
    """
    point = oriented.point
    cell_width = DESC_CELL_WIDTH_FACTOR * point.sigma_octave
    radius = int(round(cell_width * (DESC_CELLS + 1) * math.sqrt(2) / 2.0))
    radius = max(radius, 1)
    gx, gy, rr, cc = _window_gradients(space, point, radius, circular=False)
    hist = np.zeros((DESC_CELLS + 2, DESC_CELLS + 2, DESC_ORI_BINS))
    if gx.size == 0:
        return hist[1:-1, 1:-1, :].ravel().astype(np.float32)

    cos_t = math.cos(oriented.orientation)
    sin_t = math.sin(oriented.orientation)
    # offsets rotated into the keypoint frame, in units of descriptor cells
    u = (cc * cos_t + rr * sin_t) / cell_width
    v = (-cc * sin_t + rr * cos_t) / cell_width
    rbin = v + 0.5 * DESC_CELLS - 0.5
    cbin = u + 0.5 * DESC_CELLS - 0.5
    inside = (rbin > -1) & (rbin < DESC_CELLS) & (cbin > -1) & (cbin < DESC_CELLS)
    if not np.any(inside):
        return hist[1:-1, 1:-1, :].ravel().astype(np.float32)
    rbin, cbin, gx, gy, u, v = rbin[inside], cbin[inside], gx[inside], gy[inside], u[inside], v[inside]

    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx) - oriented.orientation, TWO_PI)
    obin = theta * DESC_ORI_BINS / TWO_PI
    weight = np.exp(-(u * u + v * v) / (2.0 * (0.5 * DESC_CELLS) ** 2))
    contrib = weight * mag

    r0 = np.floor(rbin).astype(np.intp)
    c0 = np.floor(cbin).astype(np.intp)
    o0 = np.floor(obin).astype(np.intp)
    fr = rbin - r0
    fc = cbin - c0
    fo = obin - o0
    o0 = o0 % DESC_ORI_BINS

    for dr in (0, 1):
        wr = contrib * (fr if dr else 1.0 - fr)
        for dc in (0, 1):
            wc = wr * (fc if dc else 1.0 - fc)
            for do in (0, 1):
                wo = wc * (fo if do else 1.0 - fo)
                np.add.at(
                    hist,
                    (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % DESC_ORI_BINS),
                    wo,
                )

    vec = hist[1:-1, 1:-1, :].ravel()
    return _normalize_clamp(vec).astype(np.float32)


def extract_features(
    img: np.ndarray,
    modality: str,
    params: SiftParams | None = None,
    source_id: str = "",
) -> FeatureSet:
    """Full detection pipeline on one preprocessed grayscale image.

    Keypoints come back sorted by (x, y, scale, orientation) with exact
    duplicates collapsed, so identical inputs give identical feature
    sets.
    """
    params = params or SiftParams()
    space = build_scale_space(img, params)
    keypoints = []
    for candidate in detect_extrema(space):
        refined = localize_keypoint(candidate, space, params)
        if refined is None:
            continue
        for oriented in assign_orientations(refined, space):
            descriptor = compute_descriptor(oriented, space)
            keypoints.append(
                Keypoint(
                    x=refined.x,
                    y=refined.y,
                    scale=refined.sigma,
                    orientation=oriented.orientation,
                    descriptor=descriptor,
                )
            )
    keypoints.sort(key=lambda k: (k.x, k.y, k.scale, k.orientation))
    unique: list[Keypoint] = []
    for kp in keypoints:
        if unique and (
            kp.x == unique[-1].x
            and kp.y == unique[-1].y
            and kp.scale == unique[-1].scale
            and kp.orientation == unique[-1].orientation
        ):
            continue
        unique.append(kp)
    return FeatureSet(modality=modality, source_id=source_id, keypoints=unique)
