"""Template reduction by K-medoids (PAM) local search.

Seeded random medoid initialization, steepest-descent evaluation of
every (medoid, non-medoid) swap, accepting the single best swap only
while it strictly lowers the summed point-to-medoid distance. The swap
sweep is vectorized to O(n^2) per iteration using the nearest/
second-nearest distance decomposition, so reducing templates of a few
thousand keypoints stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fuseid.sift import Keypoint

METRIC_DESCRIPTOR = "descriptor"
METRIC_COMPOSITE = "composite"


@dataclass(frozen=True)
class PamConfig:
    k: int
    seed: int = 0
    max_iterations: int = 100
    metric: str = METRIC_DESCRIPTOR

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.metric not in (METRIC_DESCRIPTOR, METRIC_COMPOSITE):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class MedoidPartition:
    """Result of one PAM run.

    ``medoid_indices`` are sorted indices into the input sequence;
    ``assignment[p]`` is the input index of p's nearest medoid (ties to
    the lowest medoid index); ``cost_history`` holds the strictly
    decreasing total cost after initialization and each accepted swap.
    """

    medoid_indices: np.ndarray
    assignment: np.ndarray
    total_cost: float
    converged: bool
    n_iterations: int
    cost_history: list[float] = field(default_factory=list)


def distance_matrix(points: Sequence[Keypoint], metric: str = METRIC_DESCRIPTOR) -> np.ndarray:
    """Pairwise distances between keypoints.

    ``descriptor`` is plain Euclidean distance in 128-D descriptor
    space; ``composite`` adds the Euclidean distance over
    (x, y, scale, wrapped orientation difference).
    """
    desc = np.stack([kp.descriptor for kp in points]).astype(np.float64)
    sq = np.sum(desc * desc, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (desc @ desc.T)
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    if metric == METRIC_COMPOSITE:
        geo = np.stack(
            [[kp.x, kp.y, kp.scale] for kp in points]
        ).astype(np.float64)
        g2 = np.sum(
            (geo[:, None, :] - geo[None, :, :]) ** 2, axis=2
        )
        theta = np.array([kp.orientation for kp in points], dtype=np.float64)
        dtheta = theta[:, None] - theta[None, :]
        dtheta = (dtheta + math.pi) % (2.0 * math.pi) - math.pi
        dist = dist + np.sqrt(g2 + dtheta * dtheta)
    np.fill_diagonal(dist, 0.0)
    return dist


def _nearest_two(dist: np.ndarray, medoids: np.ndarray):
    """Per point: position of nearest medoid, its distance, and the
    second-nearest distance. Medoid indices are sorted, so argmin ties
    resolve to the lowest medoid index."""
    sub = dist[:, medoids]
    pos = np.argmin(sub, axis=1)
    n = dist.shape[0]
    d1 = sub[np.arange(n), pos]
    if len(medoids) == 1:
        return pos, d1, np.full(n, np.inf)
    tmp = sub.copy()
    tmp[np.arange(n), pos] = np.inf
    d2 = tmp.min(axis=1)
    return pos, d1, d2


def pam_distances(dist: np.ndarray, cfg: PamConfig) -> MedoidPartition:
    """PAM on a precomputed symmetric distance matrix."""
    n = dist.shape[0]
    if n == 0:
        raise ValueError("empty input")
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds point count n={n}")

    rng = np.random.default_rng(cfg.seed)
    medoids = np.sort(rng.choice(n, size=cfg.k, replace=False))
    pos, d1, d2 = _nearest_two(dist, medoids)
    cost = float(dist[np.arange(n), medoids[pos]].sum())
    history = [cost]

    converged = False
    iterations = 0
    while iterations < cfg.max_iterations:
        iterations += 1
        # Cost after swapping medoid slot i for non-medoid j decomposes as
        #   base[j] + delta[i, j]
        # where base[j] treats j as an extra medoid and delta restores the
        # points that lose their current nearest medoid i.
        capped1 = np.minimum(dist, d1[:, None])
        base = capped1.sum(axis=0)
        gain = np.minimum(dist, d2[:, None]) - capped1
        delta = np.zeros((cfg.k, n))
        np.add.at(delta, pos, gain)
        swap_cost = base[None, :] + delta
        swap_cost[:, medoids] = np.inf

        flat = int(np.argmin(swap_cost))
        i, j = divmod(flat, n)
        if not np.isfinite(swap_cost[i, j]):  # k == n, nothing to swap in
            converged = True
            break
        trial = np.sort(np.concatenate([medoids[np.arange(cfg.k) != i], [j]]))
        trial_cost = float(dist[:, trial].min(axis=1).sum())
        if not trial_cost < cost:
            converged = True
            break

        medoids = trial
        cost = trial_cost
        history.append(cost)
        pos, d1, d2 = _nearest_two(dist, medoids)

    return MedoidPartition(
        medoid_indices=medoids,
        assignment=medoids[pos],
        total_cost=cost,
        converged=converged,
        n_iterations=iterations,
        cost_history=history,
    )


def pam(points: Sequence[Keypoint], cfg: PamConfig) -> MedoidPartition:
    """Cluster keypoints around k representative members."""
    if len(points) == 0:
        raise ValueError("empty input")
    return pam_distances(distance_matrix(points, cfg.metric), cfg)


def default_k(n: int, cap: int = 200) -> int:
    """Default medoid count: n/4 rounded up, capped at 200."""
    return max(1, min(cap, math.ceil(n / 4)))


def reduce_template(template, cfg: PamConfig):
    """Shrink a fused template to its k medoid keypoints.

    Modality tags and the original relative entry order are preserved;
    the result is flagged as reduced.
    """
    from fuseid.fusion import FusedTemplate

    n = len(template.entries)
    if n == 0:
        raise ValueError("cannot reduce an empty template")
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds template entry count {n}")
    part = pam(template.keypoints(), cfg)
    keep = sorted(int(i) for i in part.medoid_indices)
    return FusedTemplate(
        subject_id=template.subject_id,
        entries=[template.entries[i] for i in keep],
        reduced=True,
        provenance=template.provenance,
    )
