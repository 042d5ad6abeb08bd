"""K-NN keypoint matching between templates and score normalization.

For every probe entry the nearest gallery entries are found by
Euclidean descriptor distance (optionally plus a weighted geometric
term over x, y, scale and wrapped orientation). A probe entry counts as
matched when its nearest/second-nearest distance ratio passes the
threshold; gallery entries are consumed at most once, assigned greedily
by ascending distance. The raw score of a template pair is the matched
pair count; score collections are min-max normalized into [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fuseid.fusion import FusedTemplate
from fuseid.sift import Keypoint


@dataclass(frozen=True)
class MatchConfig:
    neighbor_count: int = 2
    ratio_threshold: float = 0.8
    geometry_weight: float = 0.0

    def __post_init__(self) -> None:
        if self.neighbor_count < 2:
            raise ValueError("neighbor_count must be >= 2 for the ratio test")
        if not 0.0 < self.ratio_threshold <= 1.0:
            raise ValueError("ratio_threshold must lie in (0, 1]")
        if self.geometry_weight < 0.0:
            raise ValueError("geometry_weight must be non-negative")


@dataclass(frozen=True)
class RawScore:
    probe_id: str
    gallery_id: str
    matched_count: int
    probe_size: int
    gallery_size: int


@dataclass(frozen=True)
class MatchPair:
    probe_index: int
    gallery_index: int
    distance: float


def _wrap_angle(delta: np.ndarray | float) -> np.ndarray | float:
    return (delta + math.pi) % (2.0 * math.pi) - math.pi


def keypoint_distance(a: Keypoint, b: Keypoint, cfg: MatchConfig = MatchConfig()) -> float:
    """Descriptor distance plus the optional weighted geometric term."""
    d = float(np.linalg.norm(a.descriptor.astype(np.float64) - b.descriptor.astype(np.float64)))
    if cfg.geometry_weight > 0.0:
        dtheta = _wrap_angle(a.orientation - b.orientation)
        geo = math.sqrt(
            (a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.scale - b.scale) ** 2 + dtheta**2
        )
        d += cfg.geometry_weight * geo
    return d


def _distance_table(probe: FusedTemplate, gallery: FusedTemplate, cfg: MatchConfig) -> np.ndarray:
    p = probe.descriptor_matrix()
    g = gallery.descriptor_matrix()
    d2 = (
        np.sum(p * p, axis=1)[:, None]
        + np.sum(g * g, axis=1)[None, :]
        - 2.0 * (p @ g.T)
    )
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    if cfg.geometry_weight > 0.0:
        pg = np.array([[kp.x, kp.y, kp.scale] for kp in probe.keypoints()])
        gg = np.array([[kp.x, kp.y, kp.scale] for kp in gallery.keypoints()])
        geo2 = np.sum((pg[:, None, :] - gg[None, :, :]) ** 2, axis=2)
        pt = np.array([kp.orientation for kp in probe.keypoints()])
        gt = np.array([kp.orientation for kp in gallery.keypoints()])
        dtheta = _wrap_angle(pt[:, None] - gt[None, :])
        dist = dist + cfg.geometry_weight * np.sqrt(geo2 + dtheta**2)
    return dist


def knn_match(
    probe: FusedTemplate, gallery: FusedTemplate, cfg: MatchConfig = MatchConfig()
) -> list[MatchPair]:
    """Ratio-tested one-to-one matches from probe to gallery entries.

    An empty template on either side yields no matches (degenerate, not
    an error). An exact nearest hit (distance 0) always passes the
    ratio test.
    """
    n_p, n_g = len(probe.entries), len(gallery.entries)
    if n_p == 0 or n_g == 0:
        return []
    dist = _distance_table(probe, gallery, cfg)

    # nearest and second-nearest per probe row; argmin ties resolve to the
    # lowest gallery index
    rows = np.arange(n_p)
    nearest = np.argmin(dist, axis=1)
    d1 = dist[rows, nearest]
    if n_g >= 2:
        masked = dist.copy()
        masked[rows, nearest] = np.inf
        d2 = masked.min(axis=1)
    else:
        d2 = np.full(n_p, np.inf)

    accepted = (d1 == 0.0) | (d1 < cfg.ratio_threshold * d2)
    cand = np.flatnonzero(accepted)
    # greedy one-to-one by ascending distance, ties by probe then gallery index
    cand = cand[np.lexsort((nearest[cand], cand, d1[cand]))]
    used = np.zeros(n_g, dtype=bool)
    pairs: list[MatchPair] = []
    for p_idx in cand:
        g_idx = nearest[p_idx]
        if used[g_idx]:
            continue
        used[g_idx] = True
        pairs.append(MatchPair(int(p_idx), int(g_idx), float(d1[p_idx])))
    return pairs


def match_score(
    probe: FusedTemplate, gallery: FusedTemplate, cfg: MatchConfig = MatchConfig()
) -> RawScore:
    """Raw match score: the number of ratio-tested one-to-one matches."""
    pairs = knn_match(probe, gallery, cfg)
    return RawScore(
        probe_id=probe.subject_id,
        gallery_id=gallery.subject_id,
        matched_count=len(pairs),
        probe_size=len(probe.entries),
        gallery_size=len(gallery.entries),
    )


def minmax_normalize(scores: Sequence[float]) -> np.ndarray:
    """Map scores affinely onto [0, 1]; a constant collection maps to 0."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot normalize an empty score collection")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)
