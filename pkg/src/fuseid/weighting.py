"""User-dependent matcher weighting with tanh adaptation.

Matchers that confuse a user with impostors (the wolf/lamb effect: the
user is easily imitated, or others imitate them) earn low weight for
that user. Raw weights are one minus the user's mean normalized
impostor score per matcher; adaptation applies tanh elementwise and
renormalizes so the weights stay in [0, 1] and sum to 1. Fusion is the
weighted sum of the per-matcher normalized scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class UserWeights:
    user_id: str
    raw: np.ndarray      # one weight per matcher, each in [0, 1]
    adapted: np.ndarray  # tanh-adapted, in [0, 1], summing to 1

    def __len__(self) -> int:
        return len(self.raw)


@dataclass(frozen=True)
class FusedScore:
    user_id: str
    matcher_scores: np.ndarray
    fused: float


def base_weights(impostor_scores_per_matcher: Sequence[Sequence[float]]) -> np.ndarray:
    """Raw weight per matcher: 1 - mean normalized impostor score.

    Every matcher needs at least one impostor score; scores are expected
    in [0, 1] and the result is clamped there.
    """
    if len(impostor_scores_per_matcher) == 0:
        raise ValueError("need at least one matcher")
    weights = np.empty(len(impostor_scores_per_matcher), dtype=np.float64)
    for i, scores in enumerate(impostor_scores_per_matcher):
        arr = np.asarray(scores, dtype=np.float64)
        if arr.size == 0:
            raise ValueError(f"matcher {i} has no impostor scores")
        weights[i] = 1.0 - arr.mean()
    return np.clip(weights, 0.0, 1.0)


def adapt_weights(raw: Sequence[float]) -> np.ndarray:
    """tanh each raw weight, then renormalize to sum 1.

    Equal raw weights (including all-zero) adapt to exactly uniform.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("need at least one raw weight")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("raw weights must lie in [0, 1]")
    if np.all(arr == arr[0]):
        return np.full(arr.size, 1.0 / arr.size)
    adapted = np.tanh(arr)
    return adapted / adapted.sum()


def compute_user_weights(
    user_id: str, impostor_scores_per_matcher: Sequence[Sequence[float]]
) -> UserWeights:
    raw = base_weights(impostor_scores_per_matcher)
    return UserWeights(user_id=user_id, raw=raw, adapted=adapt_weights(raw))


def fuse_scores(weights: UserWeights, scores: Sequence[float]) -> FusedScore:
    """Weighted sum of one user's per-matcher normalized scores.

    The result is pinned to the convex hull [min(scores), max(scores)]
    to keep float round-off from leaking outside it.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size != len(weights.adapted):
        raise ValueError(
            f"got {arr.size} scores for {len(weights.adapted)} matcher weights"
        )
    fused = float(np.dot(weights.adapted, arr))
    fused = min(max(fused, float(arr.min())), float(arr.max()))
    return FusedScore(user_id=weights.user_id, matcher_scores=arr, fused=fused)
