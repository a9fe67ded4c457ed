"""Label-free transductive inference on a new stream.

The first two seconds of the stream adapt a private copy of the encoder
(prototype pull and/or injected synthetic gradient; no labels), then
non-overlapping windows of the remainder are decoded into the pulse
estimate. The adapted encoder is discarded afterwards unless the caller
keeps it: each stream is one task, and carrying weights across streams
would contaminate evaluation. Non-finite gradients abort adaptation and
fall back to the plain inductive output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import FrameSequence, Window
from .errors import NonFiniteGradient, StreamTooShort
from .network import ModelParams
from .ordinal import decode_ordinal
from .trainer import adaptation_phase


@dataclass(frozen=True)
class InferenceResult:
    rppg: np.ndarray  # decoded values in [0, 1], length = windows * T
    start_frame: int  # stream index of the first estimated frame
    summary: dict = field(default_factory=dict)
    params: ModelParams | None = None  # adapted copy, when requested


def _decode_windows(params: ModelParams, frames: FrameSequence) -> np.ndarray:
    """Forward hop-T windows in inference mode and decode each."""
    t = params.hyper.frames_per_window
    encoder, estimator = params.encoder, params.estimator
    modes = (encoder.training, estimator.training)
    encoder.eval(), estimator.eval()
    dtype = next(encoder.parameters()).dtype
    chunks = []
    try:
        with torch.no_grad():
            for start in range(0, len(frames) - t + 1, t):
                window = frames.frames[start : start + t]
                x = torch.as_tensor(np.ascontiguousarray(np.moveaxis(window, 3, 1)), dtype=dtype)
                probs = estimator(encoder(x))
                chunks.append(decode_ordinal(probs.cpu().numpy()))
    finally:
        encoder.train(modes[0]), estimator.train(modes[1])
    return np.concatenate(chunks) if chunks else np.empty(0)


def inductive_infer(params: ModelParams, stream: FrameSequence) -> np.ndarray:
    """Pure forward pass over hop-T windows; output length floor(len/T)*T."""
    t = params.hyper.frames_per_window
    if len(stream) < t:
        raise StreamTooShort(f"stream has {len(stream)} frames, needs at least {t}")
    return _decode_windows(params, stream)


def transductive_infer(
    params: ModelParams,
    stream: FrameSequence,
    *,
    adapt_steps: int | None = None,
    alpha: float | None = None,
    use_proto: bool = True,
    use_synth: bool = True,
    keep_params: bool = False,
) -> InferenceResult:
    """Adapt on the first two seconds, then decode the remainder.

    With both gradient sources off (or L = 0) the output is identical to
    the inductive pass over the remainder. The estimator, generator, and
    prototype are never modified; the encoder copy is private per stream.
    """
    hyper = params.hyper
    steps = hyper.adapt_steps if adapt_steps is None else adapt_steps
    rate = hyper.alpha if alpha is None else alpha
    t = hyper.frames_per_window
    adapt_len = int(round(2.0 * stream.fps))
    if len(stream) < adapt_len + t:
        raise StreamTooShort(
            f"stream has {len(stream)} frames; adaptation needs {adapt_len} plus one "
            f"{t}-frame inference window"
        )

    work = params.clone()
    aborted = False
    if steps > 0 and (use_proto or use_synth):
        support = Window(stream.window(0, adapt_len))
        try:
            adaptation_phase(
                work,
                support,
                alpha=rate,
                steps=steps,
                with_labels=False,
                use_proto=use_proto,
                use_synth=use_synth,
            )
        except NonFiniteGradient:
            work = params.clone()
            aborted = True

    remainder = stream.window(adapt_len, len(stream) - adapt_len)
    rppg = _decode_windows(work, remainder)
    summary = {
        "adapt_steps": steps,
        "alpha": rate,
        "use_proto": use_proto,
        "use_synth": use_synth,
        "adapt_frames": adapt_len,
        "windows": int(len(rppg) // t),
        "aborted": aborted,
    }
    return InferenceResult(
        rppg=rppg,
        start_frame=adapt_len,
        summary=summary,
        params=work if keep_params else None,
    )


def write_trace(path, rppg: np.ndarray, start_frame: int = 0):
    """Per-stream estimate file: frame index, value."""
    with open(path, "w") as fh:
        fh.write("frame,value\n")
        for i, v in enumerate(np.asarray(rppg, dtype=np.float64)):
            fh.write(f"{start_frame + i},{v:.6f}\n")


def write_summary(path, result: InferenceResult, predicted_bpm: float | None = None):
    record = dict(result.summary)
    record["start_frame"] = result.start_frame
    record["samples"] = int(result.rppg.shape[0])
    if predicted_bpm is not None:
        record["predicted_bpm"] = predicted_bpm
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
