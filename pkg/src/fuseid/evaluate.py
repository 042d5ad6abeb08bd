"""Closed-set identification protocol and CMC evaluation.

One sample per subject enrolls a fused (optionally medoid-reduced)
gallery template; another sample probes it. Per matcher, every probe's
raw score column over the gallery is min-max normalized, then combined
per gallery user with that user's tanh-adapted weights. Weights are fit
on an enrollment-only impostor sweep so probe data never leaks into
them. Probe identifications are independent and can run on a process
pool; outputs are byte-deterministic at any worker count.
"""

from __future__ import annotations

import concurrent.futures
import os
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fuseid import report
from fuseid.fusion import EAR, FINGERPRINT, FusedTemplate, fuse
from fuseid.image import (
    EarLandmarks,
    ImageError,
    adaptive_hist_eq,
    crop_ear,
    load_image,
    load_landmarks,
    resize,
)
from fuseid.kmedoids import PamConfig, default_k, reduce_template
from fuseid.matcher import MatchConfig, match_score, minmax_normalize
from fuseid.sift import FeatureSet, SiftParams, extract_features
from fuseid.weighting import UserWeights, adapt_weights, base_weights, fuse_scores

MATCHER_FUSED = "fused"
MATCHER_NAMES = (FINGERPRINT, EAR, MATCHER_FUSED)
WEIGHTED = "weighted"


# ---------------------------------------------------------------------------
# Manifest

@dataclass(frozen=True)
class SampleRecord:
    subject_id: str
    sample_idx: int
    fp_path: str
    ear_path: str
    landmark_path: str | None = None


@dataclass
class DatasetManifest:
    samples: list[SampleRecord]

    @property
    def subjects(self) -> list[str]:
        seen: list[str] = []
        for rec in self.samples:
            if rec.subject_id not in seen:
                seen.append(rec.subject_id)
        return seen

    def sample(self, subject_id: str, sample_idx: int) -> SampleRecord | None:
        for rec in self.samples:
            if rec.subject_id == subject_id and rec.sample_idx == sample_idx:
                return rec
        return None


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Parse ``subject_id sample_idx fp ear [landmarks]`` lines.

    Relative paths resolve against the manifest's directory.
    """
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) not in (4, 5):
                raise ValueError(
                    f"{path}:{lineno}: expected 4 or 5 fields, got {len(fields)}"
                )
            try:
                sample_idx = int(fields[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad sample index {fields[1]!r}") from exc
            samples.append(
                SampleRecord(
                    subject_id=fields[0],
                    sample_idx=sample_idx,
                    fp_path=_resolve(fields[2]),
                    ear_path=_resolve(fields[3]),
                    landmark_path=_resolve(fields[4]) if len(fields) == 5 else None,
                )
            )
    return DatasetManifest(samples=samples)


# ---------------------------------------------------------------------------
# Pipeline configuration

@dataclass(frozen=True)
class PipelineConfig:
    sift: SiftParams = SiftParams()
    match: MatchConfig = MatchConfig()
    matchers: tuple[str, ...] = MATCHER_NAMES
    clahe_grid: tuple[int, int] = (8, 8)
    clahe_clip: float = 0.01
    fingerprint_size: tuple[int, int] = (200, 200)  # (w, h)
    ear_size: tuple[int, int] = (200, 140)
    ear_margin: float = 0.25
    reduce_enabled: bool = False
    reduce_k: int = 0  # 0 -> default_k(n)
    reduce_seed: int = 0
    reduce_max_iterations: int = 100
    reduce_metric: str = "descriptor"
    enroll_sample: int = 1
    probe_sample: int = 2
    workers: int = 0  # 0 -> cpu count

    def __post_init__(self) -> None:
        if not self.matchers:
            raise ValueError("need at least one matcher")
        for m in self.matchers:
            if m not in MATCHER_NAMES:
                raise ValueError(f"unknown matcher {m!r}")
        if len(set(self.matchers)) != len(self.matchers):
            raise ValueError("duplicate matcher names")


def preprocess_fingerprint(img: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    img = adaptive_hist_eq(img, cfg.clahe_grid, cfg.clahe_clip)
    return resize(img, *cfg.fingerprint_size)


def preprocess_ear(
    img: np.ndarray, cfg: PipelineConfig, landmarks: EarLandmarks | None = None
) -> np.ndarray:
    if landmarks is not None:
        img = crop_ear(img, landmarks, cfg.ear_margin)
    img = adaptive_hist_eq(img, cfg.clahe_grid, cfg.clahe_clip)
    return resize(img, *cfg.ear_size)


def extract_sample(rec: SampleRecord, cfg: PipelineConfig) -> tuple[FeatureSet, FeatureSet]:
    """Load, preprocess and extract both modalities of one sample."""
    fp_img = preprocess_fingerprint(load_image(rec.fp_path), cfg)
    landmarks = load_landmarks(rec.landmark_path) if rec.landmark_path else None
    ear_img = preprocess_ear(load_image(rec.ear_path), cfg, landmarks)
    fp = extract_features(fp_img, FINGERPRINT, cfg.sift, source_id=rec.subject_id)
    ear = extract_features(ear_img, EAR, cfg.sift, source_id=rec.subject_id)
    return fp, ear


def _reduction_seed(base_seed: int, subject_id: str) -> int:
    return (base_seed * 1000003 + zlib.crc32(subject_id.encode("utf-8"))) % (2**63)


def build_template(fp: FeatureSet, ear: FeatureSet, cfg: PipelineConfig) -> FusedTemplate:
    """Fuse one sample's feature sets, reducing when configured."""
    template = fuse(fp, ear)
    if cfg.reduce_enabled and len(template.entries) > 1:
        n = len(template.entries)
        k = cfg.reduce_k if cfg.reduce_k > 0 else default_k(n)
        k = min(k, n)
        pam_cfg = PamConfig(
            k=k,
            seed=_reduction_seed(cfg.reduce_seed, template.subject_id),
            max_iterations=cfg.reduce_max_iterations,
            metric=cfg.reduce_metric,
        )
        template = reduce_template(template, pam_cfg)
    return template


def _matcher_view(template: FusedTemplate, matcher: str) -> FusedTemplate:
    if matcher == MATCHER_FUSED:
        return template
    return template.filter(matcher)


# ---------------------------------------------------------------------------
# Gallery

@dataclass
class Gallery:
    subjects: list[str]
    templates: dict[str, FusedTemplate]
    views: dict[str, dict[str, FusedTemplate]]  # matcher -> subject -> template
    failures: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.subjects)


def enroll_gallery(
    manifest: DatasetManifest,
    cfg: PipelineConfig,
    out_dir: str | os.PathLike | None = None,
) -> Gallery:
    """Build one gallery template per subject from the enrollment sample.

    Subjects whose images cannot be read or extracted are recorded as
    failures and skipped; an extraction that comes back empty keeps the
    subject but adds a warning. With more than one matcher configured,
    the unimodal views are persisted alongside the fused template.
    """
    gallery = Gallery(subjects=[], templates={}, views={m: {} for m in cfg.matchers})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for sid in manifest.subjects:
        rec = manifest.sample(sid, cfg.enroll_sample)
        if rec is None:
            gallery.failures[sid] = f"no enrollment sample {cfg.enroll_sample}"
            continue
        try:
            fp, ear = extract_sample(rec, cfg)
            template = build_template(fp, ear, cfg)
        except (ImageError, OSError, ValueError) as exc:
            gallery.failures[sid] = str(exc)
            continue
        if len(template.entries) == 0:
            gallery.warnings.append(f"empty template for subject {sid}")
        gallery.subjects.append(sid)
        gallery.templates[sid] = template
        for m in cfg.matchers:
            gallery.views[m][sid] = _matcher_view(template, m)
        if out_dir is not None:
            from fuseid.fusion import write_template

            write_template(template, os.path.join(out_dir, f"{sid}.fused.tpl"))
            if len(cfg.matchers) > 1:
                for m in cfg.matchers:
                    if m == MATCHER_FUSED:
                        continue
                    write_template(
                        gallery.views[m][sid], os.path.join(out_dir, f"{sid}.{m}.tpl")
                    )
    return gallery


# ---------------------------------------------------------------------------
# User weights from the enrollment impostor sweep

def compute_weights(gallery: Gallery, cfg: PipelineConfig) -> dict[str, UserWeights]:
    """Per-user matcher weights from cross-matching enrollment templates.

    For each matcher the full off-diagonal gallery-vs-gallery score
    matrix is min-max normalized as one collection, then user p's raw
    weight is one minus the mean normalized score of other subjects'
    templates probed against p's template (the easily-imitated side of
    the wolf/lamb picture).
    """
    subjects = gallery.subjects
    n = len(subjects)
    ms = len(cfg.matchers)
    if n < 2:
        uniform = adapt_weights(np.ones(ms))
        return {
            sid: UserWeights(sid, raw=np.ones(ms), adapted=uniform) for sid in subjects
        }

    norm_by_matcher: dict[str, np.ndarray] = {}
    off_diag = ~np.eye(n, dtype=bool)
    for m in cfg.matchers:
        raw = np.zeros((n, n))
        for i, gal_sid in enumerate(subjects):
            for j, probe_sid in enumerate(subjects):
                if i == j:
                    continue
                raw[i, j] = match_score(
                    gallery.views[m][probe_sid], gallery.views[m][gal_sid], cfg.match
                ).matched_count
        values = raw[off_diag]
        normalized = np.zeros((n, n))
        normalized[off_diag] = minmax_normalize(values)
        norm_by_matcher[m] = normalized

    weights: dict[str, UserWeights] = {}
    for i, sid in enumerate(subjects):
        impostor = [norm_by_matcher[m][i][off_diag[i]] for m in cfg.matchers]
        raw_w = base_weights(impostor)
        weights[sid] = UserWeights(sid, raw=raw_w, adapted=adapt_weights(raw_w))
    return weights


# ---------------------------------------------------------------------------
# Identification

@dataclass
class IdentifyResult:
    probe_id: str
    ranking: list[tuple[str, float]]  # (subject, weighted score) best first
    matcher_raw: dict[str, np.ndarray]
    matcher_norm: dict[str, np.ndarray]
    weighted: np.ndarray
    flags: list[str] = field(default_factory=list)


def identify_template(
    probe: FusedTemplate,
    gallery: Gallery,
    weights: dict[str, UserWeights],
    cfg: PipelineConfig,
) -> IdentifyResult:
    """Rank gallery subjects for one probe template."""
    if len(gallery) == 0:
        raise ValueError("empty gallery")
    flags = []
    if len(probe.entries) == 0:
        flags.append(f"probe {probe.subject_id} produced no features")

    subjects = gallery.subjects
    matcher_raw: dict[str, np.ndarray] = {}
    matcher_norm: dict[str, np.ndarray] = {}
    for m in cfg.matchers:
        probe_view = _matcher_view(probe, m)
        col = np.array(
            [
                match_score(probe_view, gallery.views[m][sid], cfg.match).matched_count
                for sid in subjects
            ],
            dtype=np.float64,
        )
        matcher_raw[m] = col
        matcher_norm[m] = minmax_normalize(col)

    weighted = np.empty(len(subjects))
    for idx, sid in enumerate(subjects):
        scores = np.array([matcher_norm[m][idx] for m in cfg.matchers])
        weighted[idx] = fuse_scores(weights[sid], scores).fused

    order = sorted(range(len(subjects)), key=lambda i: (-weighted[i], subjects[i]))
    ranking = [(subjects[i], float(weighted[i])) for i in order]
    return IdentifyResult(
        probe_id=probe.subject_id,
        ranking=ranking,
        matcher_raw=matcher_raw,
        matcher_norm=matcher_norm,
        weighted=weighted,
        flags=flags,
    )


def identify(
    fp_img: np.ndarray,
    ear_img: np.ndarray,
    gallery: Gallery,
    weights: dict[str, UserWeights],
    cfg: PipelineConfig,
    landmarks: EarLandmarks | None = None,
    probe_id: str = "probe",
) -> IdentifyResult:
    """Identify a probe given as a preprocessed-ready image pair."""
    fp_pre = preprocess_fingerprint(fp_img, cfg)
    ear_pre = preprocess_ear(ear_img, cfg, landmarks)
    fp = extract_features(fp_pre, FINGERPRINT, cfg.sift, source_id=probe_id)
    ear = extract_features(ear_pre, EAR, cfg.sift, source_id=probe_id)
    return identify_template(build_template(fp, ear, cfg), gallery, weights, cfg)


# ---------------------------------------------------------------------------
# CMC

@dataclass(frozen=True)
class CmcCurve:
    hit_rates: np.ndarray  # hit_rates[r-1] = fraction of probes at rank <= r

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, len(self.hit_rates) + 1)

    def __len__(self) -> int:
        return len(self.hit_rates)


def compute_cmc(
    ranked_ids: Sequence[Sequence[str]], true_labels: Sequence[str]
) -> CmcCurve:
    """Cumulative match characteristic over closed-set probe rankings."""
    if len(ranked_ids) != len(true_labels):
        raise ValueError("one ground-truth label is needed per probe")
    if len(ranked_ids) == 0:
        raise ValueError("no probes")
    n = len(ranked_ids[0])
    ranks = []
    for ranked, label in zip(ranked_ids, true_labels):
        if len(ranked) != n:
            raise ValueError("inconsistent gallery sizes across probes")
        try:
            ranks.append(list(ranked).index(label) + 1)
        except ValueError as exc:
            raise ValueError(f"probe label {label!r} absent from gallery") from exc
    ranks_arr = np.asarray(ranks)
    hit = np.array([(ranks_arr <= r).mean() for r in range(1, n + 1)])
    return CmcCurve(hit_rates=hit)


def rank1_rate(cmc: CmcCurve) -> float:
    if len(cmc) == 0:
        raise ValueError("empty CMC curve")
    return float(cmc.hit_rates[0])


# ---------------------------------------------------------------------------
# Full experiment

@dataclass
class ExperimentReport:
    out_dir: str
    gallery_size: int
    probe_count: int
    rank1: dict[str, float]
    cmc: dict[str, CmcCurve]
    weights: dict[str, UserWeights]
    flags: list[str]


_WORKER_CTX: tuple[Gallery, dict[str, UserWeights], PipelineConfig] | None = None


def _init_worker(gallery: Gallery, weights: dict[str, UserWeights], cfg: PipelineConfig) -> None:
    global _WORKER_CTX
    _WORKER_CTX = (gallery, weights, cfg)


def _probe_task(rec: SampleRecord):
    gallery, weights, cfg = _WORKER_CTX
    return _run_probe(rec, gallery, weights, cfg)


def _run_probe(
    rec: SampleRecord,
    gallery: Gallery,
    weights: dict[str, UserWeights],
    cfg: PipelineConfig,
):
    try:
        fp, ear = extract_sample(rec, cfg)
        probe = build_template(fp, ear, cfg)
    except (ImageError, OSError, ValueError) as exc:
        return rec.subject_id, None, [f"probe {rec.subject_id} failed: {exc}"]
    result = identify_template(probe, gallery, weights, cfg)
    return rec.subject_id, result, result.flags


def run_experiment(
    manifest: DatasetManifest, cfg: PipelineConfig, out_dir: str | os.PathLike
) -> ExperimentReport:
    """Enroll, weigh, probe, and write the full report directory.

    Emits per-matcher and weighted score matrices (CSV), CMC data files,
    the user weight table, a summary, gallery templates, and a rendered
    CMC figure. Given the same manifest, config and seeds the directory
    is byte-identical across runs and worker counts.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    flags: list[str] = []

    gallery = enroll_gallery(manifest, cfg, out_dir=os.path.join(out_dir, "gallery"))
    flags.extend(f"enrollment failed for {sid}: {msg}" for sid, msg in gallery.failures.items())
    flags.extend(gallery.warnings)
    if len(gallery) == 0:
        raise ValueError("no subject could be enrolled")

    weights = compute_weights(gallery, cfg)

    probe_recs: list[SampleRecord] = []
    for sid in manifest.subjects:
        if sid in gallery.failures:
            flags.append(f"skipping probe for unenrolled subject {sid}")
            continue
        rec = manifest.sample(sid, cfg.probe_sample)
        if rec is None:
            flags.append(f"no probe sample {cfg.probe_sample} for subject {sid}")
            continue
        probe_recs.append(rec)
    if not probe_recs:
        raise ValueError("no probes to evaluate")

    workers = cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)
    if workers == 1 or len(probe_recs) == 1:
        outcomes = [_run_probe(rec, gallery, weights, cfg) for rec in probe_recs]
    else:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker,
            initargs=(gallery, weights, cfg),
        ) as pool:
            outcomes = list(pool.map(_probe_task, probe_recs))

    probe_ids: list[str] = []
    results: list[IdentifyResult] = []
    for sid, result, probe_flags in outcomes:
        flags.extend(probe_flags)
        if result is None:
            continue
        probe_ids.append(sid)
        results.append(result)
    if not results:
        raise ValueError("every probe failed")

    subjects = gallery.subjects
    cmc: dict[str, CmcCurve] = {}
    rank1: dict[str, float] = {}
    for m in cfg.matchers:
        ranked = [
            [subjects[i] for i in sorted(range(len(subjects)), key=lambda i: (-r.matcher_norm[m][i], subjects[i]))]
            for r in results
        ]
        cmc[m] = compute_cmc(ranked, probe_ids)
        rank1[m] = rank1_rate(cmc[m])
    weighted_ranked = [[sid for sid, _ in r.ranking] for r in results]
    cmc[WEIGHTED] = compute_cmc(weighted_ranked, probe_ids)
    rank1[WEIGHTED] = rank1_rate(cmc[WEIGHTED])

    report.write_report(
        out_dir,
        subjects=subjects,
        probe_ids=probe_ids,
        results=results,
        matchers=list(cfg.matchers),
        cmc=cmc,
        rank1=rank1,
        weights=weights,
        flags=flags,
    )
    return ExperimentReport(
        out_dir=out_dir,
        gallery_size=len(subjects),
        probe_count=len(results),
        rank1=rank1,
        cmc=cmc,
        weights=weights,
        flags=flags,
    )
