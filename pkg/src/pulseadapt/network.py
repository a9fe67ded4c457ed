"""The three parametric models and the gradient-injection update.

A convolutional frame encoder maps each frame to a latent row; a
bidirectional-recurrent estimator turns a window of latents into rank
probabilities; an hourglass of temporal convolutions generates synthetic
gradients at the latent cut point. Parameters are kept in three disjoint
partitions (theta / phi / psi) because the adaptation machinery updates
them on different schedules.

Batch norm runs on frozen running statistics during inference and
adaptation so per-frame independence and determinism hold at deployment;
only the supervised learning phase updates the statistics.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import FrameSequence, HyperParams, LatentSequence, OrdinalTarget
from .errors import BadConfig, NonFiniteGradient, ShapeError
from .ordinal import RankProbabilities, ordinal_loss_torch

CHECKPOINT_TAG = "pulseadapt.checkpoint.v1"


@dataclass(frozen=True)
class EncoderConfig:
    """Frame encoder: one halving block per width, then global average pool."""

    input_size: int = 64
    widths: tuple[int, ...] = (32, 48, 64, 80, 120)
    in_channels: int = 3
    kernel: int = 3

    def __post_init__(self):
        if len(self.widths) < 1:
            raise BadConfig("need at least one block")
        if self.input_size % (2 ** len(self.widths)) != 0:
            raise BadConfig(
                f"input size {self.input_size} not divisible by 2^{len(self.widths)}"
            )

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class EstimatorConfig:
    """Bidirectional recurrence over latents followed by per-step rank heads."""

    latent_dim: int = 120
    lstm_hidden: int = 60  # per direction; the two directions are concatenated
    mlp_hidden: int = 80
    ranks: int = 40

    def __post_init__(self):
        if min(self.latent_dim, self.lstm_hidden, self.mlp_hidden, self.ranks) < 1:
            raise BadConfig("all estimator widths must be positive")


@dataclass(frozen=True)
class GeneratorConfig:
    """Temporal hourglass over a latent window; emits signed values.

    The temporal axis is squeezed T -> 2T/3 -> T/3 and expanded back; each
    block resamples to its listed size by linear interpolation. The final
    block is a plain convolution: gradients are signed, so a rectified tail
    could never match negative targets.
    """

    latent_dim: int = 120
    frames: int = 60  # T; input and output are both [T, latent_dim]
    kernel: int = 3

    def __post_init__(self):
        if self.frames < 3:
            raise BadConfig("need at least 3 frames for the temporal hourglass")

    @property
    def temporal_sizes(self) -> tuple[int, int, int, int]:
        t = self.frames
        return (max(round(2 * t / 3), 1), max(round(t / 3), 1), max(round(2 * t / 3), 1), t)


def paper_configs(hyper: HyperParams) -> tuple[EncoderConfig, EstimatorConfig, GeneratorConfig]:
    enc = EncoderConfig(input_size=64, widths=(32, 48, 64, 80, 120))
    est = EstimatorConfig(latent_dim=120, lstm_hidden=60, mlp_hidden=80, ranks=hyper.ranks)
    gen = GeneratorConfig(latent_dim=120, frames=hyper.frames_per_window)
    return enc, est, gen


def desk_configs(hyper: HyperParams) -> tuple[EncoderConfig, EstimatorConfig, GeneratorConfig]:
    """Shrunk preset sized for minutes-scale CPU runs; S stays at full scale."""
    enc = EncoderConfig(input_size=32, widths=(8, 12, 16, 20, 30))
    est = EstimatorConfig(latent_dim=30, lstm_hidden=15, mlp_hidden=20, ranks=hyper.ranks)
    gen = GeneratorConfig(latent_dim=30, frames=hyper.frames_per_window)
    return enc, est, gen


class ConvBlock2d(nn.Module):
    """Conv + batch norm + average pool, with a pooled 1x1 shortcut.

    The skip path is summed in before the block ReLU; pooling precedes the
    ReLU on the main path.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)
        self.pool = nn.AvgPool2d(2)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x):
        main = self.pool(self.bn(self.conv(x)))
        return F.relu(main + self.pool(self.skip(x)))


class FrameEncoder(nn.Module):
    """Per-frame CNN f_theta: [T, 3, K, K] -> [T, D]."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        chans = (cfg.in_channels,) + cfg.widths
        self.blocks = nn.ModuleList(
            ConvBlock2d(chans[i], chans[i + 1], cfg.kernel) for i in range(len(cfg.widths))
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected [T, {self.cfg.in_channels}, K, K], got {tuple(x.shape)}")
        if x.shape[2] != self.cfg.input_size or x.shape[3] != self.cfg.input_size:
            raise ShapeError(
                f"expected {self.cfg.input_size}x{self.cfg.input_size} frames, got "
                f"{x.shape[2]}x{x.shape[3]}"
            )
        for block in self.blocks:
            x = block(x)
        return x.mean(dim=(2, 3))  # global average pool -> [T, D]

    def block_activations(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Per-block feature maps, for activation-map rendering."""
        acts = []
        for block in self.blocks:
            x = block(x)
            acts.append(x)
        return acts


class RppgEstimator(nn.Module):
    """Recurrent estimator h_phi: [T, D] -> per-frame rank probabilities."""

    def __init__(self, cfg: EstimatorConfig):
        super().__init__()
        self.cfg = cfg
        self.lstm = nn.LSTM(
            cfg.latent_dim, cfg.lstm_hidden, batch_first=True, bidirectional=True
        )
        self.fc = nn.Linear(2 * cfg.lstm_hidden, cfg.mlp_hidden)
        self.head = nn.Linear(cfg.mlp_hidden, cfg.ranks)

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ShapeError(f"expected [T, {self.cfg.latent_dim}], got {tuple(z.shape)}")
        h, _ = self.lstm(z.unsqueeze(0))
        return self.head(F.relu(self.fc(h.squeeze(0))))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(z))


class ConvBlock1d(nn.Module):
    """Temporal conv block; resamples its output to a target length."""

    def __init__(self, channels: int, kernel: int, out_len: int, tail: bool = False):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, kernel, padding=kernel // 2)
        self.norm_act = None if tail else nn.Sequential(
            nn.BatchNorm1d(channels), nn.ReLU()
        )
        self.out_len = out_len

    def forward(self, x):
        x = self.conv(x)
        if self.norm_act is not None:
            x = self.norm_act(x)
        if x.shape[-1] != self.out_len:
            x = F.interpolate(x, size=self.out_len, mode="linear", align_corners=True)
        return x


class GradientGenerator(nn.Module):
    """Hourglass g_psi: [T, D] -> signed array [T, D]."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        sizes = cfg.temporal_sizes
        blocks = [
            ConvBlock1d(cfg.latent_dim, cfg.kernel, sizes[i], tail=(i == len(sizes) - 1))
            for i in range(len(sizes))
        ]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape != (self.cfg.frames, self.cfg.latent_dim):
            raise ShapeError(
                f"expected [{self.cfg.frames}, {self.cfg.latent_dim}], got {tuple(z.shape)}"
            )
        x = z.t().unsqueeze(0)  # [1, D, T]
        x = self.blocks(x)
        return x.squeeze(0).t()


@dataclass
class ModelParams:
    """The three parameter partitions plus the global latent prototype.

    The partitions are disjoint by construction (separate modules). The
    prototype is kept in float64 so its EMA behaviour is exact at test
    tolerances.
    """

    encoder: FrameEncoder
    estimator: RppgEstimator
    generator: GradientGenerator
    z_proto: np.ndarray
    hyper: HyperParams = field(default_factory=HyperParams)
    proto_updates: int = 0

    @property
    def latent_dim(self) -> int:
        return self.encoder.cfg.latent_dim

    def clone(self) -> "ModelParams":
        return ModelParams(
            encoder=copy.deepcopy(self.encoder),
            estimator=copy.deepcopy(self.estimator),
            generator=copy.deepcopy(self.generator),
            z_proto=self.z_proto.copy(),
            hyper=self.hyper,
            proto_updates=self.proto_updates,
        )

    def partition_hashes(self, include_buffers: bool = True) -> dict[str, str]:
        """Content hash per partition; used to assert update discipline.

        Buffers (batch-norm running statistics) are included by default so
        frozen-statistics phases are checkable; pass False to compare
        learnable weights only, since train-mode forwards legitimately move
        the statistics regardless of any update rule.
        """

        def module_hash(m: nn.Module) -> str:
            h = hashlib.sha256()
            items = m.state_dict().items() if include_buffers else m.named_parameters()
            for name, t in sorted(items):
                h.update(name.encode())
                h.update(t.detach().cpu().numpy().tobytes())
            return h.hexdigest()

        return {
            "theta": module_hash(self.encoder),
            "phi": module_hash(self.estimator),
            "psi": module_hash(self.generator),
            "z_proto": hashlib.sha256(self.z_proto.tobytes()).hexdigest(),
        }


def init_params(
    enc_cfg: EncoderConfig,
    est_cfg: EstimatorConfig,
    gen_cfg: GeneratorConfig,
    seed: int = 0,
    hyper: HyperParams | None = None,
    dtype: torch.dtype = torch.float32,
) -> ModelParams:
    """Build the three models with seeded, reproducible initialization.

    The prototype starts at zero; it only becomes meaningful once the
    learning phase has run.
    """
    if est_cfg.latent_dim != enc_cfg.latent_dim or gen_cfg.latent_dim != enc_cfg.latent_dim:
        raise BadConfig("latent widths of the three models must agree")
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        encoder = FrameEncoder(enc_cfg).to(dtype)
        estimator = RppgEstimator(est_cfg).to(dtype)
        generator = GradientGenerator(gen_cfg).to(dtype)
    return ModelParams(
        encoder=encoder,
        estimator=estimator,
        generator=generator,
        z_proto=np.zeros(enc_cfg.latent_dim, dtype=np.float64),
        hyper=hyper if hyper is not None else HyperParams(),
    )


def frames_to_tensor(frames: FrameSequence, like: nn.Module) -> torch.Tensor:
    """[T, K, K, 3] unit-interval array -> [T, 3, K, K] tensor in model dtype."""
    dtype = next(like.parameters()).dtype
    arr = np.ascontiguousarray(np.moveaxis(frames.frames, 3, 1))
    return torch.as_tensor(arr, dtype=dtype)


def encode_frames(encoder: FrameEncoder, frames: FrameSequence) -> LatentSequence:
    """Inference-mode per-frame encoding; frame order is preserved."""
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            z = encoder(frames_to_tensor(frames, encoder))
    finally:
        encoder.train(was_training)
    return LatentSequence(z.cpu().numpy())


def estimate_rppg(estimator: RppgEstimator, z: LatentSequence) -> RankProbabilities:
    """Inference-mode rank probabilities for a window of latents."""
    was_training = estimator.training
    estimator.eval()
    try:
        with torch.no_grad():
            dtype = next(estimator.parameters()).dtype
            p = estimator(torch.as_tensor(z.z, dtype=dtype))
    finally:
        estimator.train(was_training)
    return RankProbabilities(p.cpu().numpy())


def generate_synthetic_gradient(generator: GradientGenerator, z: LatentSequence) -> np.ndarray:
    """Inference-mode synthetic gradient at the latent cut point, [T, D]."""
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            dtype = next(generator.parameters()).dtype
            g = generator(torch.as_tensor(z.z, dtype=dtype))
    finally:
        generator.train(was_training)
    return g.cpu().numpy()


def latent_surrogate(z: torch.Tensor, grad_at_z: torch.Tensor) -> torch.Tensor:
    """Scalar whose gradient w.r.t. upstream parameters is (dz/dtheta)^T g.

    Backpropagating sum(z * g) with g held constant injects g as if it were
    the gradient of some loss at z; this is how externally supplied (true or
    synthetic) gradients enter the encoder update.
    """
    return (z * grad_at_z.detach()).sum()


def inject_gradient_update(
    encoder: FrameEncoder,
    frames: FrameSequence,
    grad_at_z: np.ndarray | torch.Tensor,
    alpha: float,
) -> FrameEncoder:
    """One descent step theta' = theta - alpha * (dz/dtheta)^T grad_at_z.

    The supplied array is backpropagated from the latent output through the
    encoder only. Returns a new encoder; the input is left untouched.
    """
    g = torch.as_tensor(
        np.asarray(grad_at_z) if not isinstance(grad_at_z, torch.Tensor) else grad_at_z
    )
    if not torch.isfinite(g).all():
        raise NonFiniteGradient("injected gradient contains NaN or Inf")
    updated = copy.deepcopy(encoder)
    updated.eval()
    z = updated(frames_to_tensor(frames, updated))
    if tuple(g.shape) != tuple(z.shape):
        raise ShapeError(f"gradient {tuple(g.shape)} vs latents {tuple(z.shape)}")
    params = [p for p in updated.parameters() if p.requires_grad]
    grads = torch.autograd.grad(latent_surrogate(z, g.to(z.dtype)), params)
    with torch.no_grad():
        for p, gr in zip(params, grads):
            if not torch.isfinite(gr).all():
                raise NonFiniteGradient("backpropagated gradient contains NaN or Inf")
            p -= alpha * gr
    return updated


def grad_at_z_of_ordinal_loss(
    encoder: FrameEncoder,
    estimator: RppgEstimator,
    frames: FrameSequence,
    target: OrdinalTarget,
) -> np.ndarray:
    """Exact gradient of the rank loss w.r.t. the latent window.

    The latents are the cut point: the estimator participates in the
    backward pass, the encoder does not.
    """
    enc_training, est_training = encoder.training, estimator.training
    encoder.eval()
    estimator.eval()
    try:
        with torch.no_grad():
            z0 = encoder(frames_to_tensor(frames, encoder))
        z = z0.detach().requires_grad_(True)
        loss = ordinal_loss_torch(estimator(z), target)
        (grad,) = torch.autograd.grad(loss, z)
    finally:
        encoder.train(enc_training)
        estimator.train(est_training)
    return grad.detach().cpu().numpy()


def save_checkpoint(path, params: ModelParams):
    """Single-archive checkpoint: the three partitions, prototype, configs."""
    payload = {
        "format_tag": CHECKPOINT_TAG,
        "theta": params.encoder.state_dict(),
        "phi": params.estimator.state_dict(),
        "psi": params.generator.state_dict(),
        "z_proto": torch.from_numpy(params.z_proto.copy()),
        "encoder_cfg": asdict(params.encoder.cfg),
        "estimator_cfg": asdict(params.estimator.cfg),
        "generator_cfg": asdict(params.generator.cfg),
        "hyper": asdict(params.hyper),
        "proto_updates": params.proto_updates,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> ModelParams:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_tag") != CHECKPOINT_TAG:
        raise BadConfig(f"unrecognized checkpoint format: {payload.get('format_tag')!r}")
    enc_cfg = EncoderConfig(**{**payload["encoder_cfg"], "widths": tuple(payload["encoder_cfg"]["widths"])})
    est_cfg = EstimatorConfig(**payload["estimator_cfg"])
    gen_cfg = GeneratorConfig(**payload["generator_cfg"])
    hyper = HyperParams(**payload["hyper"])
    params = init_params(enc_cfg, est_cfg, gen_cfg, seed=0, hyper=hyper)
    params.encoder.load_state_dict(payload["theta"])
    params.estimator.load_state_dict(payload["phi"])
    params.generator.load_state_dict(payload["psi"])
    params.z_proto = payload["z_proto"].numpy().astype(np.float64)
    params.proto_updates = int(payload.get("proto_updates", 0))
    return params
