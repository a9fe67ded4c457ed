import numpy as np
import pytest
from dataclasses import replace

from pulseadapt.errors import BadSpec, BadSplit
from pulseadapt.synthdata import (
    NO_SHIFT,
    ShiftSpec,
    SynthTaskSpec,
    gen_task_pool,
    masked_mean_trace,
    synth_ppg,
    synth_session,
    synth_video,
    task_appearance,
)


def test_spectral_peak_at_requested_rate():
    spec = SynthTaskSpec(hr_bpm=(72.0,), duration_s=30.0, fps=30.0, seed=1)
    trace = synth_ppg(spec)
    freqs = np.fft.rfftfreq(len(trace), 1.0 / trace.rate)
    power = np.abs(np.fft.rfft(trace.samples - trace.samples.mean())) ** 2
    peak = freqs[np.argmax(power)]
    bin_width = freqs[1] - freqs[0]
    assert abs(peak - 1.2) <= bin_width


def test_integer_period_is_bit_exact():
    spec = SynthTaskSpec(hr_bpm=(60.0,), duration_s=10.0, fps=30.0, seed=0)
    x = synth_ppg(spec).samples
    np.testing.assert_array_equal(x[:-30], x[30:])


def test_trace_deterministic_per_seed():
    spec = SynthTaskSpec(seed=7, duration_s=5.0)
    np.testing.assert_array_equal(synth_ppg(spec).samples, synth_ppg(spec).samples)


def test_bpm_range_enforced():
    with pytest.raises(BadSpec):
        SynthTaskSpec(hr_bpm=(30.0,))
    with pytest.raises(BadSpec):
        SynthTaskSpec(hr_bpm=(72.0, 200.0))


def test_zero_gain_zero_noise_gives_static_video():
    spec = SynthTaskSpec(duration_s=2.0, fps=10.0, size=16, gain_scale=0.0,
                         noise_sigma=0.0, seed=3)
    frames = synth_video(synth_ppg(spec), spec).frames
    assert (frames == frames[0]).all()


def test_masked_mean_tracks_trace_at_zero_noise():
    spec = SynthTaskSpec(duration_s=10.0, fps=30.0, size=32, noise_sigma=0.0, seed=4)
    ppg = synth_ppg(spec)
    frames = synth_video(ppg, spec)
    _, _, mask = task_appearance(spec)
    mm = masked_mean_trace(frames, mask)
    r = np.corrcoef(mm, ppg.samples)[0, 1]
    assert r > 0.99


def test_affine_recoverability_at_zero_noise():
    spec = SynthTaskSpec(duration_s=10.0, fps=30.0, size=32, noise_sigma=0.0, seed=5)
    ppg = synth_ppg(spec)
    frames = synth_video(ppg, spec)
    _, _, mask = task_appearance(spec)
    mm = masked_mean_trace(frames, mask)
    design = np.stack([mm, np.ones_like(mm)], axis=1)
    coef, *_ = np.linalg.lstsq(design, ppg.samples, rcond=None)
    fit = design @ coef
    r = np.corrcoef(fit, ppg.samples)[0, 1]
    assert r > 0.99


def test_brightness_shift_preserves_correlation():
    base_spec = SynthTaskSpec(duration_s=10.0, fps=30.0, size=32, noise_sigma=0.0, seed=6)
    shifted_spec = base_spec.shifted(ShiftSpec(brightness=0.15, gain_mult=1.0,
                                               channel_gains=(1, 1, 1), noise_mult=1.0))
    ppg = synth_ppg(base_spec)
    plain = synth_video(ppg, base_spec)
    bright = synth_video(ppg, shifted_spec)
    assert bright.frames.mean() > plain.frames.mean() + 0.1
    _, _, mask = task_appearance(base_spec)
    r_plain = np.corrcoef(masked_mean_trace(plain, mask), ppg.samples)[0, 1]
    r_bright = np.corrcoef(masked_mean_trace(bright, mask), ppg.samples)[0, 1]
    assert abs(r_plain - r_bright) < 1e-3


def test_pool_split_sizes():
    pool = gen_task_pool(n_tasks=19, split=(18, 1), seed=0, n_shifted=0,
                         duration_s=2.0, fps=10.0, size=8)
    assert len(pool.train) == 18 and len(pool.val) == 1


def test_pool_bad_split():
    with pytest.raises(BadSplit):
        gen_task_pool(n_tasks=5, split=(3, 3), duration_s=2.0, fps=10.0, size=8)


def test_pool_disjoint_seeds_and_shift_invariant_truth():
    pool = gen_task_pool(n_tasks=4, split=(3, 1), seed=1, n_shifted=2,
                         duration_s=4.0, fps=10.0, size=16)
    seeds = [spec.seed for spec in pool.specs.values()]
    assert len(set(seeds)) == len(seeds)
    # a shifted task and its unshifted twin carry the same ground truth
    for shifted, twin in zip(pool.shifted, pool.shifted_base):
        np.testing.assert_array_equal(shifted.ppg.samples, twin.ppg.samples)
        assert not np.array_equal(shifted.frames.frames, twin.frames.frames)


def test_piecewise_profile_changes_rate():
    spec = SynthTaskSpec(hr_bpm=(60.0, 120.0), duration_s=20.0, fps=30.0, seed=0)
    x = synth_ppg(spec).samples
    half = len(x) // 2
    f = np.fft.rfftfreq(half, 1 / 30.0)
    first = f[np.argmax(np.abs(np.fft.rfft(x[:half] - x[:half].mean())))]
    second = f[np.argmax(np.abs(np.fft.rfft(x[half:] - x[half:].mean())))]
    assert abs(first - 1.0) < 0.15 and abs(second - 2.0) < 0.15


def test_session_frames_stay_in_unit_interval():
    spec = SynthTaskSpec(duration_s=2.0, fps=10.0, size=16, seed=8,
                         shift=ShiftSpec())  # full shift knobs on
    session = synth_session(spec, "t")
    assert session.frames.frames.min() >= 0.0
    assert session.frames.frames.max() <= 1.0
