import numpy as np
import pytest

from pulseadapt.core import (
    Episode,
    FrameSequence,
    HyperParams,
    OrdinalTarget,
    PpgTrace,
    Window,
    validate_alignment,
)
from pulseadapt.errors import (
    BadConfig,
    BadRange,
    BadSplit,
    LengthMismatch,
    NonFinite,
    RateMismatch,
)

from conftest import make_frames


def test_aligned_pair_accepted():
    frames = make_frames(60, fps=30.0)
    ppg = PpgTrace(np.sin(np.arange(60) * 0.2), 30.0)
    out_frames, out_ppg = validate_alignment(frames, ppg)
    assert out_frames is frames and out_ppg is ppg


def test_length_mismatch_rejected():
    frames = make_frames(60, fps=30.0)
    ppg = PpgTrace(np.zeros(59) + np.arange(59), 30.0)
    with pytest.raises(LengthMismatch):
        validate_alignment(frames, ppg)


def test_rate_mismatch_rejected():
    frames = make_frames(60, fps=30.0)
    ppg = PpgTrace(np.sin(np.arange(200) * 0.1), 100.0)
    with pytest.raises(RateMismatch):
        validate_alignment(frames, ppg)


def test_frames_reject_out_of_range():
    bad = np.full((4, 8, 8, 3), 1.5, dtype=np.float32)
    with pytest.raises(BadRange):
        FrameSequence(bad, 30.0)


def test_frames_reject_small_side():
    with pytest.raises(BadConfig):
        FrameSequence(np.zeros((4, 4, 4, 3), dtype=np.float32), 30.0)


def test_frames_reject_nan():
    arr = np.zeros((2, 8, 8, 3), dtype=np.float32)
    arr[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFinite):
        FrameSequence(arr, 30.0)


def test_uint8_conversion():
    raw = (np.arange(2 * 8 * 8 * 3) % 256).astype(np.uint8).reshape(2, 8, 8, 3)
    seq = FrameSequence.from_uint8(raw, 30.0)
    assert seq.frames.max() <= 1.0
    np.testing.assert_allclose(seq.frames, raw / 255.0)


def test_ordinal_target_prefix_enforced():
    OrdinalTarget(np.array([[1, 1, 0], [0, 0, 0], [1, 1, 1]]))
    with pytest.raises(BadConfig):
        OrdinalTarget(np.array([[1, 0, 1]]))
    with pytest.raises(BadConfig):
        OrdinalTarget(np.array([[0, 2, 0]]))


def test_episode_requires_query_longer_than_support():
    sup = Window(make_frames(6))
    qry_short = Window(make_frames(6, seed=1))
    with pytest.raises(BadSplit):
        Episode(sup, qry_short, "t")


def test_episode_rejects_overlap():
    sup = Window(make_frames(6))
    qry = Window(make_frames(12, seed=1))
    Episode(sup, qry, "t", support_start=0, query_start=6)  # adjacent is fine
    with pytest.raises(BadSplit):
        Episode(sup, qry, "t", support_start=0, query_start=3)


def test_hyper_validation():
    with pytest.raises(BadConfig):
        HyperParams(gamma=1.0)
    with pytest.raises(BadSplit):
        HyperParams(support_frames=120, query_frames=120)
    with pytest.raises(BadConfig):
        HyperParams(query_frames=121)  # not a multiple of the window


def test_window_checks_target_alignment():
    frames = make_frames(6, fps=6.0)
    with pytest.raises(LengthMismatch):
        Window(frames, PpgTrace(np.arange(5, dtype=float), 6.0))
    with pytest.raises(RateMismatch):
        Window(frames, PpgTrace(np.arange(6, dtype=float), 30.0))
