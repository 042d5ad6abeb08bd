"""Flat ``section.key = value`` configuration with fail-fast validation.

Every tunable of the pipeline lives in one registry with its default
and parser; unknown keys are rejected immediately, both in config files
and in ``--set`` overrides. Seed keys fall back to the ``FUSEID_SEED``
environment variable when not set explicitly.
"""

from __future__ import annotations

import os
from typing import Callable

from fuseid.evaluate import MATCHER_NAMES, PipelineConfig
from fuseid.matcher import MatchConfig
from fuseid.sift import SiftParams
from fuseid.synth import SynthConfig

SEED_ENV_VAR = "FUSEID_SEED"


class ConfigError(ValueError):
    pass


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {text!r}") from exc


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_matchers(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    if not names:
        raise ConfigError("matcher list is empty")
    for name in names:
        if name not in MATCHER_NAMES:
            raise ConfigError(
                f"unknown matcher {name!r} (choose from {', '.join(MATCHER_NAMES)})"
            )
    if len(set(names)) != len(names):
        raise ConfigError("duplicate matcher names")
    return names


def _parse_metric(text: str) -> str:
    if text not in ("descriptor", "composite"):
        raise ConfigError(f"metric must be 'descriptor' or 'composite', got {text!r}")
    return text


# key -> (default, parser); seed keys additionally honor FUSEID_SEED
REGISTRY: dict[str, tuple[object, Callable[[str], object]]] = {
    "sift.octaves": (4, _parse_int),
    "sift.scales_per_octave": (3, _parse_int),
    "sift.base_sigma": (1.6, _parse_float),
    "sift.contrast_threshold": (0.03, _parse_float),
    "sift.edge_ratio_threshold": (10.0, _parse_float),
    "imgproc.clahe_rows": (8, _parse_int),
    "imgproc.clahe_cols": (8, _parse_int),
    "imgproc.clahe_clip": (0.01, _parse_float),
    "imgproc.ear_margin": (0.25, _parse_float),
    "imgproc.fingerprint_width": (200, _parse_int),
    "imgproc.fingerprint_height": (200, _parse_int),
    "imgproc.ear_width": (200, _parse_int),
    "imgproc.ear_height": (140, _parse_int),
    "reduce.enabled": (False, _parse_bool),
    "reduce.k": (0, _parse_int),
    "reduce.seed": (0, _parse_int),
    "reduce.max_iterations": (100, _parse_int),
    "reduce.metric": ("descriptor", _parse_metric),
    "match.neighbor_count": (2, _parse_int),
    "match.ratio_threshold": (0.8, _parse_float),
    "match.geometry_weight": (0.0, _parse_float),
    "weighting.matchers": (MATCHER_NAMES, _parse_matchers),
    "eval.enroll_sample": (1, _parse_int),
    "eval.probe_sample": (2, _parse_int),
    "eval.workers": (0, _parse_int),
    "synth.subjects": (20, _parse_int),
    "synth.samples": (2, _parse_int),
    "synth.seed": (0, _parse_int),
    "synth.rotation_max_deg": (5.0, _parse_float),
    "synth.translation_max_px": (3.0, _parse_float),
    "synth.brightness_jitter": (0.1, _parse_float),
    "synth.noise_sigma": (2.0, _parse_float),
    "synth.fingerprint_noise_sigma": (-1.0, _parse_float),
    "synth.ear_noise_sigma": (-1.0, _parse_float),
    "synth.distinctiveness": (0.5, _parse_float),
    "synth.session_variation": (0.0, _parse_float),
    "synth.landmarks": (False, _parse_bool),
}

_SEED_KEYS = ("reduce.seed", "synth.seed")


class Config:
    """Typed view over the merged defaults/file/override key space."""

    def __init__(self, values: dict[str, object]):
        self._values = values

    def __getitem__(self, key: str):
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key: {key}")
        return self._values[key]

    def as_dict(self) -> dict[str, object]:
        return dict(self._values)


def _parse_assignment(line: str, source: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"{source}: expected 'section.key = value', got {line!r}")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def load_config(
    path: str | os.PathLike | None = None, overrides: tuple[str, ...] = ()
) -> Config:
    """Merge defaults, an optional config file, and --set overrides."""
    values = {key: default for key, (default, _) in REGISTRY.items()}
    explicit: set[str] = set()

    def _apply(key: str, raw: str, source: str) -> None:
        if key not in REGISTRY:
            raise ConfigError(f"{source}: unknown config key: {key}")
        _, parser = REGISTRY[key]
        try:
            values[key] = parser(raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {key}: {exc}") from exc
        explicit.add(key)

    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, raw = _parse_assignment(stripped, f"{path}:{lineno}")
            _apply(key, raw, f"{path}:{lineno}")

    for item in overrides:
        key, raw = _parse_assignment(item, "--set")
        _apply(key, raw, "--set")

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        for key in _SEED_KEYS:
            if key not in explicit:
                values[key] = _parse_int(env_seed)

    return Config(values)


def pipeline_config(cfg: Config) -> PipelineConfig:
    try:
        sift = SiftParams(
            octaves=cfg["sift.octaves"],
            scales_per_octave=cfg["sift.scales_per_octave"],
            base_sigma=cfg["sift.base_sigma"],
            contrast_threshold=cfg["sift.contrast_threshold"],
            edge_ratio_threshold=cfg["sift.edge_ratio_threshold"],
        )
        match = MatchConfig(
            neighbor_count=cfg["match.neighbor_count"],
            ratio_threshold=cfg["match.ratio_threshold"],
            geometry_weight=cfg["match.geometry_weight"],
        )
        return PipelineConfig(
            sift=sift,
            match=match,
            matchers=cfg["weighting.matchers"],
            clahe_grid=(cfg["imgproc.clahe_rows"], cfg["imgproc.clahe_cols"]),
            clahe_clip=cfg["imgproc.clahe_clip"],
            fingerprint_size=(
                cfg["imgproc.fingerprint_width"],
                cfg["imgproc.fingerprint_height"],
            ),
            ear_size=(cfg["imgproc.ear_width"], cfg["imgproc.ear_height"]),
            ear_margin=cfg["imgproc.ear_margin"],
            reduce_enabled=cfg["reduce.enabled"],
            reduce_k=cfg["reduce.k"],
            reduce_seed=cfg["reduce.seed"],
            reduce_max_iterations=cfg["reduce.max_iterations"],
            reduce_metric=cfg["reduce.metric"],
            enroll_sample=cfg["eval.enroll_sample"],
            probe_sample=cfg["eval.probe_sample"],
            workers=cfg["eval.workers"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def synth_config(cfg: Config) -> SynthConfig:
    try:
        return SynthConfig(
            subjects=cfg["synth.subjects"],
            samples=cfg["synth.samples"],
            seed=cfg["synth.seed"],
            rotation_max_deg=cfg["synth.rotation_max_deg"],
            translation_max_px=cfg["synth.translation_max_px"],
            brightness_jitter=cfg["synth.brightness_jitter"],
            noise_sigma=cfg["synth.noise_sigma"],
            fingerprint_noise_sigma=cfg["synth.fingerprint_noise_sigma"],
            ear_noise_sigma=cfg["synth.ear_noise_sigma"],
            distinctiveness=cfg["synth.distinctiveness"],
            session_variation=cfg["synth.session_variation"],
            landmarks=cfg["synth.landmarks"],
            fingerprint_size=(
                cfg["imgproc.fingerprint_width"],
                cfg["imgproc.fingerprint_height"],
            ),
            ear_size=(cfg["imgproc.ear_width"], cfg["imgproc.ear_height"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
