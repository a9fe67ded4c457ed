"""Domain value types shared by all modules.

Frames are stored channel-last in the unit interval; 8-bit inputs are
converted by dividing by 255 so every downstream computation sees a single
canonical numeric range. All types here are immutable values and safe to
share between concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadConfig,
    BadRange,
    BadSplit,
    LengthMismatch,
    NonFinite,
    RateMismatch,
)

DEFAULT_FRAME_SIZE = 64  # square crop side, configurable down to 8


@dataclass(frozen=True)
class FrameSequence:
    """T consecutive preprocessed face frames, [T, K, K, 3], values in [0, 1]."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[3] != 3 or f.shape[1] != f.shape[2]:
            raise BadConfig(f"frames must be [T, K, K, 3], got {f.shape}")
        if f.shape[0] < 1:
            raise BadConfig("need at least one frame")
        if f.shape[1] < 8:
            raise BadConfig(f"frame side must be >= 8, got {f.shape[1]}")
        if self.fps <= 0:
            raise BadConfig(f"fps must be positive, got {self.fps}")
        if not np.isfinite(f).all():
            raise NonFinite("frames contain NaN or Inf")
        if f.min() < 0.0 or f.max() > 1.0:
            raise BadRange(
                f"frame values must lie in [0, 1], got [{f.min():.4g}, {f.max():.4g}]"
            )
        object.__setattr__(self, "frames", f)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def size(self) -> int:
        return self.frames.shape[1]

    def window(self, start: int, length: int) -> "FrameSequence":
        """View of `length` frames starting at `start` (no copy)."""
        if start < 0 or start + length > len(self):
            raise BadConfig(f"window [{start}, {start + length}) out of range")
        return FrameSequence(self.frames[start : start + length], self.fps)

    @staticmethod
    def from_uint8(frames: np.ndarray, fps: float) -> "FrameSequence":
        return FrameSequence(np.asarray(frames, dtype=np.float32) / 255.0, fps)


@dataclass(frozen=True)
class PpgTrace:
    """1-D physiological signal with its sampling rate."""

    samples: np.ndarray
    rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] < 2:
            raise BadConfig(f"trace must be 1-D with >= 2 samples, got {s.shape}")
        if self.rate <= 0:
            raise BadConfig(f"rate must be positive, got {self.rate}")
        if not np.isfinite(s).all():
            raise NonFinite("trace contains NaN or Inf")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def window(self, start: int, length: int) -> "PpgTrace":
        if start < 0 or start + length > len(self):
            raise BadConfig(f"window [{start}, {start + length}) out of range")
        return PpgTrace(self.samples[start : start + length], self.rate)


@dataclass(frozen=True)
class Window:
    """A stretch of frames with its (optional) target trace."""

    frames: FrameSequence
    ppg: PpgTrace | None = None

    def __post_init__(self):
        if self.ppg is not None:
            if len(self.ppg) != len(self.frames):
                raise LengthMismatch(
                    f"{len(self.frames)} frames vs {len(self.ppg)} target samples"
                )
            if self.ppg.rate != self.frames.fps:
                raise RateMismatch(
                    f"frames at {self.frames.fps} fps, target at {self.ppg.rate} Hz"
                )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class Episode:
    """One task's support window (V frames) and query window (W frames).

    Targets are present during training and absent at deployment. Support
    precedes the query in time and the two never overlap; W > V.
    """

    support: Window
    query: Window
    task_id: str
    support_start: int = 0
    query_start: int | None = None

    def __post_init__(self):
        v, w = len(self.support), len(self.query)
        if w <= v:
            raise BadSplit(f"query must be longer than support, got V={v}, W={w}")
        if self.support.frames.fps != self.query.frames.fps:
            raise RateMismatch("support and query frame rates differ")
        qs = self.query_start
        if qs is None:
            qs = self.support_start + v
            object.__setattr__(self, "query_start", qs)
        s_lo, s_hi = self.support_start, self.support_start + v
        q_lo, q_hi = qs, qs + w
        if s_lo < q_hi and q_lo < s_hi:
            raise BadSplit("support and query windows overlap in time")


@dataclass(frozen=True)
class SessionStream:
    """A full recording: frames and the aligned contact-sensor trace."""

    frames: FrameSequence
    ppg: PpgTrace
    task_id: str

    def __post_init__(self):
        validate_alignment(self.frames, self.ppg)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class LatentSequence:
    """Per-frame latent features, [T, D]."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim != 2:
            raise BadConfig(f"latents must be [T, D], got {z.shape}")
        if not np.isfinite(z).all():
            raise NonFinite("latents contain NaN or Inf")
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class OrdinalTarget:
    """Binary rank indicators, [T, S]; every row is a prefix of ones."""

    ranks: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ranks)
        if r.ndim != 2:
            raise BadConfig(f"ranks must be [T, S], got {r.shape}")
        vals = np.unique(r)
        if not np.isin(vals, (0, 1)).all():
            raise BadConfig("ranks must be binary")
        # prefix property: rows are non-increasing left to right
        if r.shape[1] > 1 and (np.diff(r.astype(np.int8), axis=1) > 0).any():
            raise BadConfig("rank rows must be 1s followed by 0s")
        object.__setattr__(self, "ranks", r.astype(np.int8))

    @property
    def counts(self) -> np.ndarray:
        return self.ranks.sum(axis=1)


@dataclass(frozen=True)
class HyperParams:
    """Learning-process knobs; defaults reproduce the full-scale recipe."""

    eta: float = 1e-3  # learning-phase rate
    alpha: float = 1e-5  # adaptation rate
    gamma: float = 0.8  # prototype EMA weight
    adapt_steps: int = 10  # L
    frames_per_window: int = 60  # T
    ranks: int = 40  # S
    support_frames: int = 60  # V
    query_frames: int = 120  # W
    pretrain_epochs: int = 5  # R
    tasks_per_batch: int = 4  # N
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise BadConfig(f"gamma must be in (0, 1), got {self.gamma}")
        if self.eta <= 0 or self.alpha <= 0:
            raise BadConfig("eta and alpha must be positive")
        if self.adapt_steps < 0:
            raise BadConfig("adapt_steps must be >= 0")
        if self.ranks < 2:
            raise BadConfig("need at least 2 ranks")
        if self.query_frames <= self.support_frames:
            raise BadSplit("query window must be longer than the support window")
        if self.support_frames % self.frames_per_window != 0:
            raise BadConfig("support length must be a multiple of the window length")
        if self.query_frames % self.frames_per_window != 0:
            raise BadConfig("query length must be a multiple of the window length")
        if self.pretrain_epochs < 0 or self.tasks_per_batch < 1:
            raise BadConfig("pretrain_epochs >= 0 and tasks_per_batch >= 1 required")


def validate_alignment(frames: FrameSequence, ppg: PpgTrace):
    """Check that a frame sequence and a trace describe the same timeline.

    Returns the pair unchanged when sample counts and rates agree. Callers
    holding a trace at a different rate must resample before pairing.
    """
    if ppg.rate != frames.fps:
        raise RateMismatch(
            f"frames at {frames.fps} fps but trace at {ppg.rate} Hz; resample first"
        )
    if len(ppg) != len(frames):
        raise LengthMismatch(f"{len(frames)} frames vs {len(ppg)} trace samples")
    return frames, ppg
