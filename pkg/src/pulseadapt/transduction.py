"""Prototype maintenance and the transductive training losses.

The global latent prototype is the running mean of per-task latent means,
maintained as an exponential moving average so it can be updated one task
batch at a time. Pulling test-time latents toward it counteracts
appearance shift without labels. All math here runs in float64; the
prototype is the one quantity whose contraction behaviour tests check to
1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadConfig, EmptyBatch, NonFinite, ShapeMismatch


@dataclass(frozen=True)
class Prototype:
    """Global latent mean, [D], plus how many EMA updates produced it."""

    value: np.ndarray
    update_count: int = 0

    def __post_init__(self):
        v = np.asarray(self.value, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeMismatch(f"prototype must be [D], got {v.shape}")
        if not np.isfinite(v).all():
            raise NonFinite("prototype contains NaN or Inf")
        if self.update_count < 0:
            raise BadConfig("update_count must be >= 0")
        object.__setattr__(self, "value", v)


def task_prototype(z: np.ndarray) -> np.ndarray:
    """Mean latent of one task window: arithmetic mean over the T rows."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ShapeMismatch(f"latents must be [T, D] with T >= 1, got {arr.shape}")
    return arr.mean(axis=0)


def update_global_prototype(
    proto: Prototype, batch_task_means: Sequence[np.ndarray], gamma: float
) -> Prototype:
    """EMA step: proto' = gamma * proto + (1 - gamma) * mean(batch means)."""
    if not (0.0 < gamma < 1.0):
        raise BadConfig(f"gamma must be in (0, 1), got {gamma}")
    if len(batch_task_means) == 0:
        raise EmptyBatch("need at least one task mean")
    means = np.stack([np.asarray(m, dtype=np.float64) for m in batch_task_means])
    if means.shape[1:] != proto.value.shape:
        raise ShapeMismatch(f"task means {means.shape[1:]} vs prototype {proto.value.shape}")
    new = gamma * proto.value + (1.0 - gamma) * means.mean(axis=0)
    return Prototype(new, proto.update_count + 1)


def proto_loss(z: np.ndarray, proto: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared distance of each latent row to the prototype.

    Returns (loss, gradient w.r.t. z): loss = (1/T) sum_t ||z_t - proto||^2
    and d/dz_t = (2/T)(z_t - proto).
    """
    arr = np.asarray(z, dtype=np.float64)
    p = np.asarray(proto, dtype=np.float64)
    if arr.ndim != 2 or p.ndim != 1 or arr.shape[1] != p.shape[0]:
        raise ShapeMismatch(f"latents {arr.shape} incompatible with prototype {p.shape}")
    diff = arr - p[None, :]
    loss = float((diff**2).sum(axis=1).mean())
    grad = (2.0 / arr.shape[0]) * diff
    return loss, grad


def syn_loss(generated: np.ndarray, true_grad: np.ndarray) -> float:
    """Element-mean squared error between a generated and a true gradient.

    The squared norm is divided by the element count so the loss scale is
    invariant to the window length and latent width. The true gradient is a
    constant target here; no gradient flows into it.
    """
    g = np.asarray(generated, dtype=np.float64)
    t = np.asarray(true_grad, dtype=np.float64)
    if g.shape != t.shape:
        raise ShapeMismatch(f"generated {g.shape} vs target {t.shape}")
    return float(((g - t) ** 2).mean())
