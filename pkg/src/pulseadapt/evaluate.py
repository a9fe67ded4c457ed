"""Heart-rate extraction, error metrics, and the comparison harness.

Heart rate comes from peak spacing: local maxima with a physiological
minimum distance and an adaptive prominence threshold (a fraction of the
signal's inter-quartile range). Decoded pulse estimates are band-pass
detrended (0.7-4 Hz) before peak picking by default; clean contact traces
are peaked raw. Reported per video: a single average heart rate.

Metric conventions: errors e_i = predicted - true per video; SD is the
population standard deviation of e, MAE the mean |e|, RMSE the root mean
square of e, and R the Pearson correlation of predicted against true.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import signal as sps

from .core import FrameSequence, SessionStream
from .errors import (
    BadLayer,
    DegenerateVariance,
    LengthMismatch,
    TooFewPeaks,
    TooShort,
)
from .network import FrameEncoder, ModelParams, frames_to_tensor

BAND_LOW_HZ = 0.7
BAND_HIGH_HZ = 4.0


@dataclass(frozen=True)
class HrEstimate:
    bpm: float
    n_peaks: int
    window_s: float


@dataclass(frozen=True)
class MetricsReport:
    sd: float
    mae: float
    rmse: float
    r: float
    n: int


def band_pass(x: np.ndarray, rate: float, low: float = BAND_LOW_HZ,
              high: float = BAND_HIGH_HZ, order: int = 2) -> np.ndarray:
    """Zero-phase Butterworth band-pass; detrends and removes quantization steps."""
    nyq = rate / 2.0
    high = min(high, 0.99 * nyq)
    b, a = sps.butter(order, [low / nyq, high / nyq], btype="band")
    return sps.filtfilt(b, a, np.asarray(x, dtype=np.float64))


def detect_peaks(
    x: np.ndarray,
    rate: float,
    min_hr: float = 40.0,
    max_hr: float = 240.0,
    *,
    bandpass: bool = False,
    prominence_frac: float = 0.3,
) -> np.ndarray:
    """Local maxima with physiological spacing and adaptive prominence.

    The minimum inter-peak distance is one period at max_hr; the prominence
    threshold is a fraction of the inter-quartile range, so secondary bumps
    within a beat are rejected without a fixed amplitude scale.
    """
    x = np.asarray(x, dtype=np.float64)
    min_len = 2.0 * rate / (max_hr / 60.0)
    if x.shape[0] < min_len:
        raise TooShort(f"signal of {x.shape[0]} samples; need at least {min_len:.0f}")
    if bandpass:
        x = band_pass(x, rate, low=min(BAND_LOW_HZ, min_hr / 60.0), high=max_hr / 60.0)
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    if iqr <= 0:
        return np.empty(0, dtype=np.intp)  # constant signal: no peaks
    distance = rate * 60.0 / max_hr
    peaks, _ = sps.find_peaks(x, distance=distance, prominence=prominence_frac * iqr)
    return peaks


def hr_from_peaks(peaks: np.ndarray, rate: float) -> HrEstimate:
    """bpm = 60 * rate / mean successive peak spacing."""
    peaks = np.asarray(peaks)
    if peaks.shape[0] < 2:
        raise TooFewPeaks(f"need at least 2 peaks, got {peaks.shape[0]}")
    spacing = np.diff(peaks).mean()
    return HrEstimate(
        bpm=60.0 * rate / spacing,
        n_peaks=int(peaks.shape[0]),
        window_s=float((peaks[-1] - peaks[0]) / rate),
    )


def hr_of_signal(x: np.ndarray, rate: float, *, bandpass: bool) -> HrEstimate:
    return hr_from_peaks(detect_peaks(x, rate, bandpass=bandpass), rate)


def spectral_hr(x: np.ndarray, rate: float) -> float:
    """Cross-check utility: bpm at the periodogram argmax in the pulse band."""
    f, pxx = sps.periodogram(np.asarray(x, dtype=np.float64), fs=rate)
    band = (f >= BAND_LOW_HZ) & (f <= BAND_HIGH_HZ)
    if not band.any():
        raise TooShort("signal too short for a spectral estimate in the pulse band")
    return float(f[band][np.argmax(pxx[band])] * 60.0)


def compute_metrics(pred, true) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.shape[0] == 0:
        raise LengthMismatch(f"pred {pred.shape} vs true {true.shape}")
    err = pred - true
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err**2).mean()))
    if pred.shape[0] < 2:
        raise LengthMismatch("SD and R need at least 2 paired values")
    sd = float(err.std())  # population std of the signed error
    if pred.std() == 0 or true.std() == 0:
        raise DegenerateVariance("correlation undefined for a constant series")
    r = float(np.corrcoef(pred, true)[0, 1])
    return MetricsReport(sd=sd, mae=mae, rmse=rmse, r=r, n=int(pred.shape[0]))


# ---------------------------------------------------------------------------
# pool evaluation and the adaptation-steps sweep

ABLATIONS = {
    "inductive": dict(use_proto=False, use_synth=False),
    "proto": dict(use_proto=True, use_synth=False),
    "synth": dict(use_proto=False, use_synth=True),
    "proto+synth": dict(use_proto=True, use_synth=True),
}


def session_hr_pair(
    params: ModelParams,
    session: SessionStream,
    *,
    adapt_steps: int,
    alpha: float | None = None,
    use_proto: bool = True,
    use_synth: bool = True,
) -> tuple[float, float]:
    """(predicted, true) average bpm for one session.

    All configurations, including the inductive one, predict over the
    stream remainder (after the two-second adaptation span) so their
    numbers are comparable; ground truth is peaked over the same span.
    """
    from .deploy import transductive_infer

    result = transductive_infer(
        params,
        session.frames,
        adapt_steps=adapt_steps,
        alpha=alpha,
        use_proto=use_proto,
        use_synth=use_synth,
    )
    pred = hr_of_signal(result.rppg, session.frames.fps, bandpass=True).bpm
    span = result.rppg.shape[0]
    gt_window = session.ppg.samples[result.start_frame : result.start_frame + span]
    true = hr_of_signal(gt_window, session.ppg.rate, bandpass=False).bpm
    return pred, true


def evaluate_pool(
    params: ModelParams,
    sessions,
    *,
    adapt_steps: int,
    alpha: float | None = None,
    use_proto: bool = True,
    use_synth: bool = True,
) -> tuple[MetricsReport, list[dict]]:
    rows = []
    for session in sessions:
        pred, true = session_hr_pair(
            params,
            session,
            adapt_steps=adapt_steps,
            alpha=alpha,
            use_proto=use_proto,
            use_synth=use_synth,
        )
        rows.append({"task": session.task_id, "pred_bpm": pred, "true_bpm": true})
    report = compute_metrics([r["pred_bpm"] for r in rows], [r["true_bpm"] for r in rows])
    return report, rows


def sweep_adaptation_steps(
    params: ModelParams,
    sessions,
    adapt_steps=(0, 5, 10, 20, 30),
    *,
    alpha: float | None = None,
    baseline_params: ModelParams | None = None,
) -> list[dict]:
    """Metrics per (L, configuration) over a session pool.

    The baseline row never adapts, so it is computed once and repeated for
    every L; the transductive configurations are re-run per L.
    """
    rows = []
    if baseline_params is not None:
        report, _ = evaluate_pool(
            baseline_params, sessions, adapt_steps=0, use_proto=False, use_synth=False
        )
        for L in adapt_steps:
            rows.append({"config": "baseline", "L": int(L), **report.__dict__})
    for name, flags in ABLATIONS.items():
        for L in adapt_steps:
            effective = 0 if name == "inductive" else int(L)
            report, _ = evaluate_pool(
                params, sessions, adapt_steps=effective, alpha=alpha, **flags
            )
            rows.append({"config": name, "L": int(L), **report.__dict__})
    return rows


def write_sweep_csv(path, rows: list[dict]):
    cols = ("config", "L", "sd", "mae", "rmse", "r", "n")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")


def plot_sweep(path, rows: list[dict], metric: str = "mae"):
    """One curve per configuration: metric against adaptation steps."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    configs = sorted({r["config"] for r in rows})
    for config in configs:
        pts = sorted((r["L"], r[metric]) for r in rows if r["config"] == config)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=config)
    ax.set_xlabel("adaptation steps")
    ax.set_ylabel(metric.upper() + " (bpm)" if metric != "r" else "R")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# activation maps

def activation_map(
    encoder: FrameEncoder,
    frames: FrameSequence,
    layer_index: int,
    frame_indices=None,
) -> np.ndarray:
    """Mean absolute activation per spatial location, upsampled to K x K.

    Returns [n_frames, K, K] maps, min-max normalized per frame; a flat map
    normalizes to 0.5 everywhere.
    """
    n_blocks = len(encoder.blocks)
    if not (0 <= layer_index < n_blocks):
        raise BadLayer(f"layer index {layer_index} outside [0, {n_blocks})")
    if frame_indices is None:
        frame_indices = range(len(frames))
    k = frames.size
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            sel = frames.frames[np.asarray(list(frame_indices))]
            x = frames_to_tensor(FrameSequence(sel, frames.fps), encoder)
            act = encoder.block_activations(x)[layer_index]
            heat = act.abs().mean(dim=1, keepdim=True)  # [n, 1, h, w]
            heat = torch.nn.functional.interpolate(
                heat, size=(k, k), mode="bilinear", align_corners=False
            ).squeeze(1)
    finally:
        encoder.train(was_training)
    maps = heat.cpu().numpy()
    out = np.empty_like(maps)
    for i, m in enumerate(maps):
        lo, hi = m.min(), m.max()
        out[i] = 0.5 if hi == lo else (m - lo) / (hi - lo)
    return out


def save_activation_grid(path, maps: np.ndarray, frames: FrameSequence | None = None):
    """One panel per selected frame; optionally the input frame alongside."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = maps.shape[0]
    n_rows = 2 if frames is not None else 1
    fig, axes = plt.subplots(n_rows, n, figsize=(2.0 * n, 2.0 * n_rows), squeeze=False)
    for i in range(n):
        if frames is not None:
            axes[0][i].imshow(frames.frames[i])
            axes[0][i].axis("off")
        axes[-1][i].imshow(maps[i], cmap="inferno", vmin=0.0, vmax=1.0)
        axes[-1][i].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# joint vs extractor-only adaptation

def _joint_adapt(params: ModelParams, head_gen, support_frames: FrameSequence,
                 *, steps: int, alpha: float, use_proto: bool) -> ModelParams:
    """Adapt encoder and estimator together via a head-side injected gradient."""
    work = params.clone()
    encoder, estimator = work.encoder, work.estimator
    encoder.eval(), estimator.eval(), head_gen.eval()
    dtype = next(encoder.parameters()).dtype
    x = frames_to_tensor(support_frames, encoder)
    proto = torch.as_tensor(work.z_proto, dtype=dtype)
    pars = [p for m in (encoder, estimator) for p in m.parameters() if p.requires_grad]
    for _ in range(steps):
        z = encoder(x)
        logits = estimator.logits(z)
        with torch.no_grad():
            g = head_gen(logits.detach())
        loss = (logits * g).sum()
        if use_proto:
            loss = loss + ((z - proto) ** 2).sum(dim=1).mean()
        grads = torch.autograd.grad(loss, pars)
        with torch.no_grad():
            for p, gr in zip(pars, grads):
                p -= alpha * gr
    return work


def compare_joint_vs_extractor(
    params: ModelParams,
    head_gen,
    sessions,
    *,
    adapt_steps: int | None = None,
    alpha: float | None = None,
) -> dict[str, MetricsReport]:
    """Extractor-only adaptation against joint encoder+estimator adaptation.

    Both use the same two-second support span and the same step count; the
    joint variant injects the head-side synthetic gradient so the update
    reaches the estimator too.
    """
    from .deploy import transductive_infer, _decode_windows

    hyper = params.hyper
    steps = hyper.adapt_steps if adapt_steps is None else adapt_steps
    rate = hyper.alpha if alpha is None else alpha
    t = hyper.frames_per_window

    ext_pairs, joint_pairs = [], []
    for session in sessions:
        pred_e, true = session_hr_pair(
            params, session, adapt_steps=steps, alpha=rate, use_proto=True, use_synth=True
        )
        adapt_len = int(round(2.0 * session.frames.fps))
        support = session.frames.window(0, adapt_len)
        adapted = _joint_adapt(
            params, head_gen, support, steps=steps, alpha=rate, use_proto=True
        )
        remainder = session.frames.window(adapt_len, len(session.frames) - adapt_len)
        rppg = _decode_windows(adapted, remainder)
        pred_j = hr_of_signal(rppg, session.frames.fps, bandpass=True).bpm
        ext_pairs.append((pred_e, true))
        joint_pairs.append((pred_j, true))
    return {
        "extractor_only": compute_metrics(*zip(*[(p, t_) for p, t_ in ext_pairs])),
        "joint": compute_metrics(*zip(*[(p, t_) for p, t_ in joint_pairs])),
    }
