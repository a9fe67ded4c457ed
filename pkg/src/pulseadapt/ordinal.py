"""Pulse-target normalization, rank encoding, rank loss, and decoding.

A T-sample window of the target trace is min-max normalized, then each
sample is compared against S uniform thresholds tau_s = (s - 1) / S for
s = 1..S. That turns regression into S threshold-exceedance binary
problems; the predicted value is recovered by counting heads above 0.5
and dividing by S, so every grid value k / S roundtrips exactly.

Normalization is per window, not per video, so targets stay computable
online at short-window granularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import OrdinalTarget
from .errors import BadRange, NonFinite, ShapeMismatch

CLIP_EPS = 1e-7  # bounds the loss and its gradient on saturated heads


@dataclass(frozen=True)
class RankProbabilities:
    """Per-frame rank probabilities, [T, S], every entry strictly in (0, 1)."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 2:
            raise ShapeMismatch(f"probabilities must be [T, S], got {p.shape}")
        if not np.isfinite(p).all():
            raise NonFinite("probabilities contain NaN or Inf")
        object.__setattr__(self, "p", np.clip(p, CLIP_EPS, 1.0 - CLIP_EPS))


def normalize_segment(window: np.ndarray) -> np.ndarray:
    """Affinely map a window onto [0, 1]; a flat window maps to all 0.5.

    The flat case returns a constant rather than raising so that degenerate
    windows never abort a training batch.
    """
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] < 2:
        raise ShapeMismatch(f"expected a 1-D window of >= 2 samples, got {w.shape}")
    if not np.isfinite(w).all():
        raise NonFinite("window contains NaN or Inf")
    lo, hi = w.min(), w.max()
    if hi == lo:
        return np.full_like(w, 0.5)
    return (w - lo) / (hi - lo)


def encode_ordinal(values: np.ndarray, n_ranks: int) -> OrdinalTarget:
    """Threshold unit-interval values into [T, S] binary rank indicators.

    ranks[t, s] = 1 iff values[t] > (s - 1) / S, so the row sum is the
    rank count of the sample.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatch(f"expected 1-D values, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise NonFinite("values contain NaN or Inf")
    if v.min() < 0.0 or v.max() > 1.0:
        raise BadRange(f"values outside [0, 1]: [{v.min():.4g}, {v.max():.4g}]")
    thresholds = np.arange(n_ranks, dtype=np.float64) / n_ranks
    return OrdinalTarget((v[:, None] > thresholds[None, :]).astype(np.int8))


def window_target(ppg_window: np.ndarray, n_ranks: int) -> OrdinalTarget:
    """Normalize a raw trace window and encode it in one step."""
    return encode_ordinal(normalize_segment(ppg_window), n_ranks)


def ordinal_loss(p: RankProbabilities | np.ndarray, target: OrdinalTarget) -> float:
    """Summed binary cross-entropy over ranks, averaged over frames."""
    probs = p.p if isinstance(p, RankProbabilities) else np.asarray(p, dtype=np.float64)
    t = target.ranks
    if probs.shape != t.shape:
        raise ShapeMismatch(f"probabilities {probs.shape} vs target {t.shape}")
    probs = np.clip(probs, CLIP_EPS, 1.0 - CLIP_EPS)
    ll = t * np.log(probs) + (1 - t) * np.log(1.0 - probs)
    return float(-ll.sum() / t.shape[0])


def ordinal_loss_torch(probs: torch.Tensor, target: OrdinalTarget | torch.Tensor) -> torch.Tensor:
    """Differentiable twin of :func:`ordinal_loss` for training graphs."""
    t = target.ranks if isinstance(target, OrdinalTarget) else target
    t = torch.as_tensor(np.asarray(t), dtype=probs.dtype, device=probs.device)
    if probs.shape != t.shape:
        raise ShapeMismatch(f"probabilities {tuple(probs.shape)} vs target {tuple(t.shape)}")
    p = probs.clamp(CLIP_EPS, 1.0 - CLIP_EPS)
    ll = t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)
    return -ll.sum() / probs.shape[0]


def decode_ordinal(p: RankProbabilities | np.ndarray) -> np.ndarray:
    """Decode probabilities to unit-interval values by counting exceedances.

    Non-prefix probability patterns are tolerated: the decoded rank is just
    the number of entries above 0.5.
    """
    probs = p.p if isinstance(p, RankProbabilities) else np.asarray(p, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeMismatch(f"probabilities must be [T, S], got {probs.shape}")
    counts = (probs > 0.5).sum(axis=1)
    return counts.astype(np.float64) / probs.shape[1]


def hard_probabilities(target: OrdinalTarget) -> RankProbabilities:
    """Turn binary ranks into saturated probabilities (for roundtrip checks)."""
    return RankProbabilities(target.ranks.astype(np.float64))
