"""Synthetic multimodal dataset generation.

Stands in for a real fingerprint+ear acquisition campaign at desk
scale. Each subject gets a seeded base texture per modality: a
labyrinthine band-pass "ridge" pattern for fingerprints and layered
blob/ring contours with fine grain for ears. Samples are rendered from
the base by a small rigid perturbation (rotation, translation) plus
brightness jitter and additive noise, all derived deterministically
from the root seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from fuseid.image import EarLandmarks, write_landmarks, write_pgm

PAD = 32


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 20
    samples: int = 2
    seed: int = 0
    rotation_max_deg: float = 5.0
    translation_max_px: float = 3.0
    brightness_jitter: float = 0.1
    noise_sigma: float = 2.0
    fingerprint_noise_sigma: float = -1.0  # negative: fall back to noise_sigma
    ear_noise_sigma: float = -1.0
    distinctiveness: float = 0.5
    session_variation: float = 0.0  # fraction of texture detail redrawn per sample
    landmarks: bool = False
    fingerprint_size: tuple[int, int] = (200, 200)  # (w, h)
    ear_size: tuple[int, int] = (200, 140)

    def __post_init__(self) -> None:
        if self.subjects < 2:
            raise ValueError("need at least 2 subjects")
        if self.samples < 1:
            raise ValueError("need at least 1 sample per subject")
        if not 0.0 < self.distinctiveness <= 1.0:
            raise ValueError("distinctiveness must lie in (0, 1]")
        if not 0.0 <= self.session_variation < 1.0:
            raise ValueError("session_variation must lie in [0, 1)")

    def modality_noise(self, modality: str) -> float:
        override = (
            self.fingerprint_noise_sigma if modality == "fp" else self.ear_noise_sigma
        )
        return override if override >= 0 else self.noise_sigma


@dataclass(frozen=True)
class SampleTransform:
    """Rigid perturbation mapping output pixels back into the base texture."""

    angle_deg: float
    tx: float
    ty: float


@dataclass
class SynthResult:
    manifest_path: str
    transforms: dict[tuple[str, int, str], SampleTransform] = field(default_factory=dict)


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    std = field_.std()
    return field_ / std if std > 0 else field_


# sentinel subject index for texture components shared by the population
_COMMON = 0xFFFFFFFF

# texture family shape constants
RIDGE_SIGMA_FINE = 4.5
RIDGE_SIGMA_COARSE = 9.0
RIDGE_GAIN = 2.5
FP_SESSION_SCALE = 1.0  # fingerprint sensitivity to session_variation
EAR_RING_COUNT = 6
EAR_GRAIN_AMP = 0.5
EAR_GRAIN_SIGMA = 2.0


def _session_mix(
    stable: np.ndarray, session_rng: np.random.Generator, variation: float
) -> np.ndarray:
    """Redraw ``variation`` of a unit-variance noise field for one session."""
    if variation <= 0.0:
        return stable
    fresh = session_rng.standard_normal(stable.shape)
    return math.sqrt(1.0 - variation) * stable + math.sqrt(variation) * fresh


def _fingerprint_texture(
    seed: int,
    subject: int,
    size: tuple[int, int],
    distinct: float,
    sample: int = 1,
    variation: float = 0.0,
) -> np.ndarray:
    """Ridge-like texture: sharpened band-pass noise at ridge wavelength.

    ``distinct`` mixes subject-private noise against a population-shared
    component before filtering, so lowering it raises impostor
    similarity without losing ridge contrast. Samples after the first
    redraw ``variation`` of the noise input, emulating session change.
    """
    w, h = size
    shape = (h + 2 * PAD, w + 2 * PAD)
    rng = _rng(seed, subject, 0)
    white = rng.standard_normal(shape)
    shade = 0.25 * _smooth_noise(rng, shape, 30.0)
    if distinct < 1.0:
        shared = _rng(seed, _COMMON, 0).standard_normal(shape)
        white = math.sqrt(distinct) * white + math.sqrt(1.0 - distinct) * shared
    if sample != 1:
        white = _session_mix(white, _rng(seed, subject, 3, sample), FP_SESSION_SCALE * variation)
    band = ndimage.gaussian_filter(white, RIDGE_SIGMA_FINE, mode="wrap") - ndimage.gaussian_filter(
        white, RIDGE_SIGMA_COARSE, mode="wrap"
    )
    band /= band.std()
    ridges = np.tanh(RIDGE_GAIN * band)
    # slow illumination field keeps tiles from being statistically identical
    tex = ridges + shade
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 20.0 + 215.0 * tex


def _ear_rings(rng: np.random.Generator, shape: tuple[int, int], size: tuple[int, int]) -> np.ndarray:
    w, h = size
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    tex = np.zeros(shape)
    for i in range(EAR_RING_COUNT):
        cx = PAD + rng.uniform(0.25, 0.75) * w
        cy = PAD + rng.uniform(0.25, 0.75) * h
        radius = rng.uniform(0.08, 0.45) * min(w, h)
        width = rng.uniform(2.5, 7.0)
        amp = rng.uniform(0.6, 1.0) * (1 if i % 2 == 0 else -1)
        r = np.hypot(xx - cx, yy - cy)
        tex += amp * np.exp(-((r - radius) ** 2) / (2.0 * width * width))
    return tex


def _ear_texture(
    seed: int,
    subject: int,
    size: tuple[int, int],
    distinct: float,
    sample: int = 1,
    variation: float = 0.0,
) -> np.ndarray:
    """Smooth blob/ring contours plus fine grain, loosely ear-like.

    Ring layout is stable across sessions; only the fine grain is
    session-mixed, so ears degrade more gracefully than fingerprints.
    """
    w, h = size
    shape = (h + 2 * PAD, w + 2 * PAD)
    rng = _rng(seed, subject, 1)
    rings = _ear_rings(rng, shape, size)
    grain = rng.standard_normal(shape)
    smooth = 0.5 * _smooth_noise(rng, shape, 18.0)
    tex = distinct * rings
    if distinct < 1.0:
        shared_rng = _rng(seed, _COMMON, 1)
        tex += (1.0 - distinct) * _ear_rings(shared_rng, shape, size)
        grain = math.sqrt(distinct) * grain + math.sqrt(1.0 - distinct) * shared_rng.standard_normal(shape)
    if sample != 1:
        grain = _session_mix(grain, _rng(seed, subject, 4, sample), variation)
    tex += smooth
    fine = ndimage.gaussian_filter(grain, EAR_GRAIN_SIGMA, mode="wrap")
    tex += EAR_GRAIN_AMP * fine / fine.std()  # fine grain feeds the detector
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 20.0 + 215.0 * tex


def _fingerprint_base(seed: int, subject: int, size: tuple[int, int], distinct: float) -> np.ndarray:
    """Canonical (enrollment-session) fingerprint texture."""
    return _fingerprint_texture(seed, subject, size, distinct)


def _ear_base(seed: int, subject: int, size: tuple[int, int], distinct: float) -> np.ndarray:
    """Canonical (enrollment-session) ear texture."""
    return _ear_texture(seed, subject, size, distinct)


def _render_sample(
    base: np.ndarray,
    size: tuple[int, int],
    transform: SampleTransform,
    rng: np.random.Generator,
    cfg: SynthConfig,
    noise_sigma: float,
) -> np.ndarray:
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    a = math.radians(transform.angle_deg)
    dx, dy = xx - cx, yy - cy
    src_x = cx + dx * math.cos(a) - dy * math.sin(a) + transform.tx + PAD
    src_y = cy + dx * math.sin(a) + dy * math.cos(a) + transform.ty + PAD
    sampled = ndimage.map_coordinates(base, [src_y, src_x], order=1, mode="nearest")

    gain = 1.0 + rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)
    offset = rng.uniform(-20.0 * cfg.brightness_jitter, 20.0 * cfg.brightness_jitter)
    noisy = sampled * gain + offset + rng.normal(0.0, noise_sigma, sampled.shape)
    return np.rint(noisy).clip(0, 255).astype(np.uint8)


def _sample_transform(rng: np.random.Generator, sample_idx: int, cfg: SynthConfig) -> SampleTransform:
    # the enrollment sample stays geometrically canonical; later samples move
    if sample_idx == 1:
        return SampleTransform(0.0, 0.0, 0.0)
    return SampleTransform(
        angle_deg=rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg),
        tx=rng.uniform(-cfg.translation_max_px, cfg.translation_max_px),
        ty=rng.uniform(-cfg.translation_max_px, cfg.translation_max_px),
    )


def _ear_landmarks(rng: np.random.Generator, size: tuple[int, int]) -> EarLandmarks:
    w, h = size
    jx, jy = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
    tf = (round(w * 0.38) + jx, round(h * 0.30) + jy)
    at = (round(w * 0.62) - jx, round(h * 0.72) - jy)
    return EarLandmarks(tf, at)


def synth_dataset(cfg: SynthConfig, out_dir: str | os.PathLike) -> SynthResult:
    """Generate images, optional landmark sidecars, and a manifest.

    Layout: ``<out>/<sid>_<sample>_fp.pgm``, ``<sid>_<sample>_ear.pgm``
    (plus ``..._ear.txt`` landmarks when enabled) and ``manifest.txt``
    with one ``subject_id sample_idx fp ear [landmarks]`` line per
    sample, paths relative to the manifest.
    """
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"cannot create output directory {out_dir}: {exc}") from exc

    width = max(3, len(str(cfg.subjects)))
    lines: list[str] = []
    result = SynthResult(manifest_path=os.path.join(out_dir, "manifest.txt"))
    for s in range(cfg.subjects):
        sid = f"s{s:0{width}d}"
        for sample in range(1, cfg.samples + 1):
            fp_tex = _fingerprint_texture(
                cfg.seed, s, cfg.fingerprint_size, cfg.distinctiveness, sample, cfg.session_variation
            )
            ear_tex = _ear_texture(
                cfg.seed, s, cfg.ear_size, cfg.distinctiveness, sample, cfg.session_variation
            )
            fields = [sid, str(sample)]
            for modality, base, size in (
                ("fp", fp_tex, cfg.fingerprint_size),
                ("ear", ear_tex, cfg.ear_size),
            ):
                rng = _rng(cfg.seed, s, 0 if modality == "fp" else 1, sample)
                transform = _sample_transform(rng, sample, cfg)
                img = _render_sample(base, size, transform, rng, cfg, cfg.modality_noise(modality))
                name = f"{sid}_{sample}_{modality}.pgm"
                write_pgm(img, os.path.join(out_dir, name))
                fields.append(name)
                result.transforms[(sid, sample, modality)] = transform
            if cfg.landmarks:
                lm_rng = _rng(cfg.seed, s, 2, sample)
                lm = _ear_landmarks(lm_rng, cfg.ear_size)
                lm_name = f"{sid}_{sample}_ear.txt"
                write_landmarks(lm, os.path.join(out_dir, lm_name))
                fields.append(lm_name)
            lines.append(" ".join(fields))
    with open(result.manifest_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return result
