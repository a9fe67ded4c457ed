"""Desk-scale oracle: video/trace pairs with known ground truth.

Faces are synthetic ovals, not rendered humans: the point is to isolate
exactly the signal pathway being learned (per-pixel intensity modulated by
the blood-volume pulse) with a recoverability guarantee. The masked
spatial mean of a generated clip is an affine function of the trace, so a
least-squares fit recovers it with r > 0.99 at zero noise, which proves
the learning problem solvable before any model touches it.

Shift knobs (brightness, modulation gain, channel imbalance, noise) change
appearance only; they never alter the ground-truth heart rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import FrameSequence, PpgTrace, SessionStream
from .errors import BadSpec, BadSplit, LengthMismatch

BPM_MIN, BPM_MAX = 45.0, 180.0


@dataclass(frozen=True)
class ShiftSpec:
    """Appearance-shift knobs applied on top of a base task."""

    brightness: float = 0.2
    gain_mult: float = 0.5
    channel_gains: tuple[float, float, float] = (1.08, 0.95, 0.92)
    noise_mult: float = 2.0


NO_SHIFT = ShiftSpec(brightness=0.0, gain_mult=1.0, channel_gains=(1.0, 1.0, 1.0), noise_mult=1.0)


@dataclass(frozen=True)
class SynthTaskSpec:
    """Everything needed to render one task deterministically."""

    hr_bpm: tuple[float, ...] = (72.0,)  # piecewise-constant, equal-length segments
    second_harmonic: float = 0.2
    notch_phase: float = 1.0  # radians; phases the dicrotic-like bump
    duration_s: float = 120.0
    fps: float = 30.0
    size: int = 32
    gain_scale: float = 0.06
    noise_sigma: float = 0.01
    shift: ShiftSpec = NO_SHIFT
    seed: int = 0

    def __post_init__(self):
        if len(self.hr_bpm) < 1:
            raise BadSpec("need at least one heart-rate segment")
        for bpm in self.hr_bpm:
            if not (BPM_MIN <= bpm <= BPM_MAX):
                raise BadSpec(f"{bpm} bpm outside physiological range [{BPM_MIN}, {BPM_MAX}]")
        if self.duration_s <= 0 or self.fps <= 0:
            raise BadSpec("duration and fps must be positive")
        if self.size < 8:
            raise BadSpec("frame side must be >= 8")
        if abs(self.second_harmonic) > 0.5:
            raise BadSpec("second harmonic must stay below the fundamental")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.fps))

    def shifted(self, shift: ShiftSpec) -> "SynthTaskSpec":
        return replace(self, shift=shift)


def synth_ppg(spec: SynthTaskSpec) -> PpgTrace:
    """Render the pulse trace for a task.

    The phase is accumulated in beat units and wrapped with an exact
    modulus, so integer-period profiles (e.g. 72 bpm at 30 fps) are
    bit-exactly periodic.
    """
    n = spec.n_samples
    if n < 2:
        raise BadSpec("duration too short for a trace")
    seg_len = n // len(spec.hr_bpm)
    bpm = np.empty(n, dtype=np.float64)
    for i, value in enumerate(spec.hr_bpm):
        start = i * seg_len
        end = n if i == len(spec.hr_bpm) - 1 else (i + 1) * seg_len
        bpm[start:end] = value
    # cumulative phase in bpm-sample units; one beat spans 60 * fps units
    cycle = np.cumsum(bpm)
    beat_units = 60.0 * spec.fps
    frac = np.mod(cycle, beat_units) / beat_units
    samples = np.sin(2.0 * np.pi * frac) + spec.second_harmonic * np.sin(
        4.0 * np.pi * frac + spec.notch_phase
    )
    return PpgTrace(samples, spec.fps)


def _oval_mask(size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    return (xx / 0.62) ** 2 + (yy / 0.80) ** 2 <= 1.0


def _smooth_field(size: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded smooth random field, roughly in [-1, 1]."""
    f = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 6.0)
    peak = np.abs(f).max()
    return f / peak if peak > 0 else f


def task_appearance(spec: SynthTaskSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Base intensity map, per-pixel modulation gain map, and the skin mask.

    The gain map is nonzero only inside the oval; green carries the
    strongest modulation, mirroring blood-volume absorption.
    """
    rng = np.random.default_rng(spec.seed)
    mask = _oval_mask(spec.size)
    base = np.empty((spec.size, spec.size, 3), dtype=np.float64)
    skin = np.array([0.62, 0.50, 0.44]) + rng.uniform(-0.06, 0.06, size=3)
    background = 0.25 + 0.08 * rng.random()
    for c in range(3):
        texture = 0.05 * _smooth_field(spec.size, rng)
        base[:, :, c] = np.where(mask, skin[c] + texture, background)
    # positive modulation field inside the mask only
    field = 0.5 + 0.5 * np.abs(_smooth_field(spec.size, rng))
    channel_weight = np.array([0.55, 1.0, 0.7])
    gain = spec.gain_scale * field[:, :, None] * channel_weight[None, None, :]
    gain *= mask[:, :, None]
    return base, gain, mask


def synth_video(ppg: PpgTrace, spec: SynthTaskSpec) -> FrameSequence:
    """Render frames: base + gain * (trace - mean) + noise, shifted, clamped."""
    if len(ppg) != spec.n_samples:
        raise LengthMismatch(f"trace has {len(ppg)} samples, spec expects {spec.n_samples}")
    base, gain, _ = task_appearance(spec)
    centered = (ppg.samples - ppg.samples.mean()).astype(np.float32)
    shift = spec.shift
    frames = base.astype(np.float32)[None] + (shift.gain_mult * gain.astype(np.float32))[
        None
    ] * centered[:, None, None, None]
    sigma = spec.noise_sigma * shift.noise_mult
    if sigma > 0:
        noise_rng = np.random.default_rng(spec.seed + 1)
        frames += noise_rng.standard_normal(frames.shape, dtype=np.float32) * np.float32(sigma)
    frames *= np.asarray(shift.channel_gains, dtype=np.float32)[None, None, None, :]
    frames += np.float32(shift.brightness)
    np.clip(frames, 0.0, 1.0, out=frames)
    return FrameSequence(frames, spec.fps)


def synth_session(spec: SynthTaskSpec, task_id: str) -> SessionStream:
    ppg = synth_ppg(spec)
    return SessionStream(synth_video(ppg, spec), ppg, task_id)


def masked_mean_trace(frames: FrameSequence, mask: np.ndarray) -> np.ndarray:
    """Spatial mean over the masked region per frame (all channels pooled)."""
    sel = frames.frames[:, mask, :]
    return sel.reshape(len(frames), -1).mean(axis=1)


@dataclass(frozen=True)
class TaskPool:
    """Generated sessions grouped by role."""

    train: tuple[SessionStream, ...]
    val: tuple[SessionStream, ...]
    shifted: tuple[SessionStream, ...]
    shifted_base: tuple[SessionStream, ...]  # unshifted twins of `shifted`
    specs: dict = field(default_factory=dict)


def _draw_spec(rng: np.random.Generator, seed: int, duration_s: float, fps: float, size: int,
               n_segments: int = 1) -> SynthTaskSpec:
    segs = tuple(float(rng.uniform(52.0, 108.0)) for _ in range(n_segments))
    return SynthTaskSpec(
        hr_bpm=segs,
        second_harmonic=float(rng.uniform(0.12, 0.28)),
        notch_phase=float(rng.uniform(0.6, 1.4)),
        duration_s=duration_s,
        fps=fps,
        size=size,
        seed=seed,
    )


def gen_task_pool(
    n_tasks: int = 14,
    split: tuple[int, int] = (12, 2),
    seed: int = 0,
    n_shifted: int = 4,
    duration_s: float = 120.0,
    fps: float = 30.0,
    size: int = 32,
    shift: ShiftSpec = ShiftSpec(),
) -> TaskPool:
    """Generate train/val sessions plus held-out shifted test tasks.

    All task seeds are spawned from one master seed and are disjoint across
    splits; shifted tasks share their trace (hence their ground-truth heart
    rate) with an unshifted twin that never appears in training.
    """
    if sum(split) != n_tasks:
        raise BadSplit(f"split {split} does not sum to {n_tasks}")
    if min(split) < 0 or n_shifted < 0:
        raise BadSplit("split sizes must be nonnegative")
    master = np.random.default_rng(seed)
    seeds = master.integers(0, 2**31 - 1, size=n_tasks + n_shifted)

    def build(kind: str, index: int, task_seed: int, apply_shift: bool):
        rng = np.random.default_rng(task_seed)
        spec = _draw_spec(rng, int(task_seed), duration_s, fps, size)
        if apply_shift:
            spec = spec.shifted(shift)
        return spec, synth_session(spec, f"{kind}_{index:02d}")

    train, val, shifted, shifted_base = [], [], [], []
    specs = {}
    for i in range(split[0]):
        spec, sess = build("train", i, seeds[i], False)
        train.append(sess)
        specs[sess.task_id] = spec
    for i in range(split[1]):
        spec, sess = build("val", i, seeds[split[0] + i], False)
        val.append(sess)
        specs[sess.task_id] = spec
    for i in range(n_shifted):
        task_seed = seeds[n_tasks + i]
        spec, sess = build("shift", i, task_seed, True)
        _, twin = build("shiftbase", i, task_seed, False)
        shifted.append(sess)
        shifted_base.append(twin)
        specs[sess.task_id] = spec
    return TaskPool(tuple(train), tuple(val), tuple(shifted), tuple(shifted_base), specs)
