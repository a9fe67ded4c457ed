import numpy as np
import pytest

from pulseadapt.core import PpgTrace, SessionStream, FrameSequence
from pulseadapt.errors import (
    BadRate,
    BadSplit,
    DecodeError,
    MissingFile,
    RateMismatch,
    TooShort,
)
from pulseadapt.ingest import (
    SessionManifest,
    load_session,
    read_manifest,
    read_packed_frames,
    resample_ppg,
    slice_episodes,
    write_manifest,
    write_packed_frames,
    write_session,
)
from pulseadapt.synthdata import SynthTaskSpec, synth_session

from conftest import make_session


def test_packed_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.random((5, 8, 8, 3)).astype(np.float32)
    path = tmp_path / "frames.bin"
    write_packed_frames(path, frames)
    back = read_packed_frames(path)
    np.testing.assert_array_equal(back, frames)


def test_packed_rejects_bad_magic(tmp_path):
    path = tmp_path / "frames.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(DecodeError):
        read_packed_frames(path)


def test_session_roundtrip(tmp_path):
    spec = SynthTaskSpec(duration_s=3.0, fps=10.0, size=8, seed=2)
    session = synth_session(spec, "roundtrip")
    directory = write_session(session, tmp_path / "roundtrip")
    back = load_session(directory)
    np.testing.assert_array_equal(back.frames.frames, session.frames.frames)
    np.testing.assert_array_equal(back.ppg.samples, session.ppg.samples)
    assert back.task_id == "roundtrip"


def test_missing_trace_file(tmp_path):
    session = make_session(n=24, fps=6.0)
    directory = write_session(session, tmp_path / "s")
    (directory / "ppg.txt").unlink()
    with pytest.raises(MissingFile):
        load_session(directory)


def test_load_resamples_trace(tmp_path):
    # 100 Hz trace against 30 fps frames: resampled onto the frame grid
    rng = np.random.default_rng(1)
    n_frames = 90
    frames = rng.random((n_frames, 8, 8, 3)).astype(np.float32)
    directory = tmp_path / "s"
    directory.mkdir()
    write_packed_frames(directory / "frames.bin", frames)
    t100 = np.arange(300) / 100.0
    (directory / "ppg.txt").write_text("\n".join(repr(float(v)) for v in np.sin(2 * np.pi * t100)))
    write_manifest(
        directory / "manifest.json",
        SessionManifest(frames="frames.bin", fps=30.0, ppg="ppg.txt", ppg_rate=100.0, id="s"),
    )
    session = load_session(directory)
    assert session.ppg.rate == 30.0
    assert len(session.ppg) == len(session.frames) == n_frames
    with pytest.raises(RateMismatch):
        load_session(directory, resample=False)


def test_resample_identity():
    trace = PpgTrace(np.sin(np.arange(50) * 0.3), 30.0)
    out = resample_ppg(trace, 30.0)
    np.testing.assert_array_equal(out.samples, trace.samples)


def test_resample_exact_on_ramp():
    ramp = PpgTrace(np.linspace(0.0, 1.0, 101), 100.0)
    out = resample_ppg(ramp, 30.0)
    expected = np.arange(len(out)) / 30.0  # ramp value equals time here
    assert np.abs(out.samples - expected).max() < 1e-9


def test_resample_constant():
    trace = PpgTrace(np.full(40, 0.7), 100.0)
    out = resample_ppg(trace, 30.0)
    np.testing.assert_allclose(out.samples, 0.7)


def test_resample_bad_rate():
    with pytest.raises(BadRate):
        resample_ppg(PpgTrace(np.arange(10.0), 30.0), 0.0)


def test_slice_counts():
    session = make_session(n=3600, fps=30.0)
    episodes = slice_episodes(session, t=60, v=60, w=120, stride=180)
    assert len(episodes) == 20
    for ep in episodes:
        assert len(ep.support) == 60 and len(ep.query) == 120
        assert ep.query_start == ep.support_start + 60


def test_slice_rejects_equal_split():
    session = make_session(n=3600, fps=30.0)
    with pytest.raises(BadSplit):
        slice_episodes(session, t=60, v=120, w=120)


def test_slice_rejects_short_session():
    session = make_session(n=24)
    with pytest.raises(TooShort):
        slice_episodes(session, t=6, v=12, w=18)


def test_image_directory_loading(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(3)
    raw = (rng.random((4, 8, 8, 3)) * 255).astype(np.uint8)
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    for i, frame in enumerate(raw):
        Image.fromarray(frame).save(img_dir / f"frame_{i:03d}.png")
    (tmp_path / "ppg.txt").write_text("\n".join("0.1 0.2 0.3 0.4".split()))
    write_manifest(
        tmp_path / "manifest.json",
        SessionManifest(frames="imgs", fps=4.0, ppg="ppg.txt", ppg_rate=4.0, id="imgs"),
    )
    session = load_session(tmp_path)
    np.testing.assert_allclose(session.frames.frames, raw / 255.0, atol=1e-7)


def test_manifest_roundtrip(tmp_path):
    m = SessionManifest(frames="f.bin", fps=30.0, ppg="p.txt", ppg_rate=100.0,
                        id="x", preproc="external-landmark-crop")
    write_manifest(tmp_path / "manifest.json", m)
    assert read_manifest(tmp_path / "manifest.json") == m
    with pytest.raises(MissingFile):
        read_manifest(tmp_path / "nope.json")
