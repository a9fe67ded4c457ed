"""Session loading, trace resampling, and episode slicing.

Ingestion consumes pre-cropped, landmark-masked frames; face detection
and tracking are external tools, named in the manifest's `preproc` field
for provenance only. A session directory holds one manifest plus a frame
payload (packed float array or a directory of numbered images) and a
plain-text trace file.

Packed frame format: 16-byte header (4-byte magic ``PAF1``, then uint32
frame count, side, channels, little-endian), followed by float32 data in
[T, K, K, C] row-major order.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Episode, FrameSequence, PpgTrace, SessionStream, Window
from .errors import (
    BadRate,
    BadSplit,
    DecodeError,
    MissingFile,
    RateMismatch,
    TooShort,
)

FRAME_MAGIC = b"PAF1"
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SessionManifest:
    frames: str  # path to packed array or image directory, relative to manifest
    fps: float
    ppg: str  # path to the trace file
    ppg_rate: float
    id: str
    preproc: str | None = None

    def __post_init__(self):
        if self.fps <= 0 or self.ppg_rate <= 0:
            raise BadRate("fps and ppg_rate must be positive")


def write_manifest(path: Path, manifest: SessionManifest):
    Path(path).write_text(json.dumps(asdict(manifest), indent=2) + "\n")


def read_manifest(path: Path) -> SessionManifest:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
        return SessionManifest(**raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise DecodeError(f"bad manifest {path}: {exc}") from exc


def write_packed_frames(path: Path, frames: np.ndarray):
    arr = np.ascontiguousarray(frames, dtype="<f4")
    if arr.ndim != 4:
        raise DecodeError(f"frames must be [T, K, K, C], got {arr.shape}")
    t, k, k2, c = arr.shape
    header = struct.pack("<4sIII", FRAME_MAGIC, t, k, c)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_packed_frames(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"frame file not found: {path}")
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise DecodeError(f"{path}: truncated header")
        magic, t, k, c = struct.unpack("<4sIII", header)
        if magic != FRAME_MAGIC:
            raise DecodeError(f"{path}: bad magic {magic!r}")
        data = np.fromfile(fh, dtype="<f4")
    if data.size != t * k * k * c:
        raise DecodeError(f"{path}: payload size {data.size} != {t}x{k}x{k}x{c}")
    return data.reshape(t, k, k, c)


_NUM_RE = re.compile(r"(\d+)")


def _numeric_key(name: str):
    m = _NUM_RE.search(name)
    return (int(m.group(1)) if m else 0, name)


def read_image_frames(directory: Path) -> np.ndarray:
    """Load a directory of numbered 8-bit images as unit-interval frames."""
    from PIL import Image

    directory = Path(directory)
    files = sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")),
        key=lambda p: _numeric_key(p.name),
    )
    if not files:
        raise MissingFile(f"no image files in {directory}")
    frames = []
    for p in files:
        try:
            with Image.open(p) as img:
                frames.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
        except OSError as exc:
            raise DecodeError(f"cannot decode {p}: {exc}") from exc
    return np.stack(frames)


def write_ppg_text(path: Path, samples: np.ndarray):
    with open(path, "w") as fh:
        for v in np.asarray(samples, dtype=np.float64):
            fh.write(f"{float(v)!r}\n")


def read_ppg_text(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"trace file not found: {path}")
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=1)
    except ValueError as exc:
        raise DecodeError(f"cannot parse {path}: {exc}") from exc


def resample_ppg(trace: PpgTrace, to_rate: float) -> PpgTrace:
    """Linear interpolation onto a uniform grid spanning the same duration."""
    if to_rate <= 0:
        raise BadRate(f"target rate must be positive, got {to_rate}")
    if to_rate == trace.rate:
        return trace
    n_new = int(round(len(trace) * to_rate / trace.rate))
    if n_new < 2:
        raise BadRate("target rate leaves fewer than 2 samples")
    t_old = np.arange(len(trace), dtype=np.float64) / trace.rate
    t_new = np.arange(n_new, dtype=np.float64) / to_rate
    return PpgTrace(np.interp(t_new, t_old, trace.samples), to_rate)


def load_session(manifest: SessionManifest | Path | str, resample: bool = True) -> SessionStream:
    """Load and align one session; trace is resampled to the frame rate.

    With resampling disabled a rate disagreement raises instead.
    """
    if not isinstance(manifest, SessionManifest):
        manifest_path = Path(manifest)
        if manifest_path.is_dir():
            manifest_path = manifest_path / MANIFEST_NAME
        root = manifest_path.parent
        manifest = read_manifest(manifest_path)
    else:
        root = Path(".")
    frames_path = root / manifest.frames
    if frames_path.is_dir():
        frames = read_image_frames(frames_path)
    else:
        frames = read_packed_frames(frames_path)
    trace = PpgTrace(read_ppg_text(root / manifest.ppg), manifest.ppg_rate)
    if trace.rate != manifest.fps:
        if not resample:
            raise RateMismatch(
                f"trace at {trace.rate} Hz but frames at {manifest.fps} fps (resampling disabled)"
            )
        trace = resample_ppg(trace, manifest.fps)
    n = min(len(trace), frames.shape[0])
    return SessionStream(
        FrameSequence(frames[:n], manifest.fps),
        PpgTrace(trace.samples[:n], manifest.fps),
        manifest.id,
    )


def write_session(session: SessionStream, directory: Path, preproc: str | None = None) -> Path:
    """Emit one session directory in the manifest format; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_packed_frames(directory / "frames.bin", session.frames.frames)
    write_ppg_text(directory / "ppg.txt", session.ppg.samples)
    manifest = SessionManifest(
        frames="frames.bin",
        fps=session.frames.fps,
        ppg="ppg.txt",
        ppg_rate=session.ppg.rate,
        id=session.task_id,
        preproc=preproc,
    )
    write_manifest(directory / MANIFEST_NAME, manifest)
    return directory


def slice_episodes(
    session: SessionStream, t: int, v: int, w: int, stride: int | None = None
) -> list[Episode]:
    """Cut a session into episodes: V support frames then W query frames.

    Support precedes the query within each episode, mirroring deployment
    where adaptation uses the start of the stream.
    """
    if w <= v:
        raise BadSplit(f"query window must exceed support window, got V={v}, W={w}")
    if v % t != 0 or w % t != 0:
        raise BadSplit(f"V={v} and W={w} must be multiples of the model window T={t}")
    if stride is None:
        stride = v + w
    if stride < 1:
        raise BadSplit("stride must be >= 1")
    n = len(session)
    if n < v + w:
        raise TooShort(f"session has {n} frames, needs at least {v + w}")
    episodes = []
    for start in range(0, n - (v + w) + 1, stride):
        support = Window(
            session.frames.window(start, v),
            session.ppg.window(start, v),
        )
        query = Window(
            session.frames.window(start + v, w),
            session.ppg.window(start + v, w),
        )
        episodes.append(
            Episode(support, query, session.task_id, support_start=start)
        )
    return episodes
