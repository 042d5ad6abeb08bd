"""Multimodal fingerprint+ear identification pipeline.

A library and CLI implementing the full chain: grayscale preprocessing
(CLAHE, resize, landmark-based ear cropping), from-scratch SIFT feature
extraction, feature-level concatenation fusion, PAM K-medoids template
reduction, K-NN descriptor matching with min-max score normalization,
user-dependent tanh-adapted matcher weighting, and a closed-set
identification harness with CMC reporting on synthetic data.
"""

from fuseid.image import (
    EarLandmarks,
    ImageError,
    adaptive_hist_eq,
    crop_ear,
    load_image,
    load_landmarks,
    load_pgm,
    resize,
    write_pgm,
)
from fuseid.sift import (
    FeatureSet,
    Keypoint,
    SiftParams,
    build_scale_space,
    detect_extrema,
    extract_features,
)
from fuseid.fusion import (
    FusedTemplate,
    TemplateError,
    fuse,
    read_template,
    write_template,
)
from fuseid.kmedoids import MedoidPartition, PamConfig, pam, reduce_template
from fuseid.matcher import (
    MatchConfig,
    RawScore,
    keypoint_distance,
    knn_match,
    match_score,
    minmax_normalize,
)
from fuseid.weighting import (
    FusedScore,
    UserWeights,
    adapt_weights,
    base_weights,
    fuse_scores,
)
from fuseid.evaluate import (
    CmcCurve,
    DatasetManifest,
    compute_cmc,
    enroll_gallery,
    identify,
    load_manifest,
    rank1_rate,
    run_experiment,
)
from fuseid.synth import SynthConfig, synth_dataset

__version__ = "0.1.0"

__all__ = [
    "EarLandmarks",
    "ImageError",
    "adaptive_hist_eq",
    "crop_ear",
    "load_image",
    "load_landmarks",
    "load_pgm",
    "resize",
    "write_pgm",
    "FeatureSet",
    "Keypoint",
    "SiftParams",
    "build_scale_space",
    "detect_extrema",
    "extract_features",
    "FusedTemplate",
    "TemplateError",
    "fuse",
    "read_template",
    "write_template",
    "MedoidPartition",
    "PamConfig",
    "pam",
    "reduce_template",
    "MatchConfig",
    "RawScore",
    "keypoint_distance",
    "knn_match",
    "match_score",
    "minmax_normalize",
    "FusedScore",
    "UserWeights",
    "adapt_weights",
    "base_weights",
    "fuse_scores",
    "CmcCurve",
    "DatasetManifest",
    "compute_cmc",
    "enroll_gallery",
    "identify",
    "load_manifest",
    "rank1_rate",
    "run_experiment",
    "SynthConfig",
    "synth_dataset",
]
