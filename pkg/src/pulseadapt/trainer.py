"""Episodic training: pretraining, the L-step adaptation phase, and the
learning phase with prototype maintenance.

Each sampled task contributes one episode: its support window adapts the
encoder for L steps (prototype pull + injected synthetic gradient + the
labeled rank loss), then the query window updates the gradient generator,
the encoder, the estimator, and finally the global prototype. Updates are
plain SGD, applied sequentially exactly as listed; there is no
second-order meta-gradient and the adapted encoder carries over into the
learning phase without a reset.

Partition discipline is strict: the adaptation phase touches only theta;
the generator update touches only psi. Tests enforce this by hashing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import Episode, HyperParams, SessionStream, Window
from .errors import EmptyDataset, MissingLabels, NonFiniteGradient, ShapeError
from .ingest import slice_episodes
from .network import (
    ModelParams,
    desk_configs,
    frames_to_tensor,
    init_params,
    latent_surrogate,
    paper_configs,
    save_checkpoint,
)
from .ordinal import ordinal_loss_torch, window_target
from .transduction import Prototype, update_global_prototype


@dataclass
class TrainConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    epochs: int = 20
    mode: str = "meta"  # "meta" (full recipe) or "baseline" (plain supervised)
    episodes_per_task: int = 2
    pretrain_windows_per_task: int = 6
    use_proto: bool = True  # prototype-distance gradient during adaptation
    use_synth: bool = True  # synthetic-gradient machinery (adaptation + psi updates)
    preset: str = "desk"  # "desk" or "paper" architecture sizes
    log_every: int = 1
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mode not in ("meta", "baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")


def _window_targets(window: Window, t: int, s: int) -> list[torch.Tensor]:
    """Per-window ordinal targets from the window's trace, normalized per window."""
    targets = []
    for start in range(0, len(window), t):
        tgt = window_target(window.ppg.samples[start : start + t], s)
        targets.append(torch.from_numpy(tgt.ranks.astype(np.float64)))
    return targets


def _split_windows(window: Window, t: int) -> list[np.ndarray]:
    return [window.frames.frames[start : start + t] for start in range(0, len(window), t)]


def _check_finite(grads, what: str):
    for g in grads:
        if g is not None and not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {what}")


def adaptation_phase(
    params: ModelParams,
    support: Window,
    *,
    alpha: float,
    steps: int,
    with_labels: bool,
    use_proto: bool = True,
    use_synth: bool = True,
) -> tuple[torch.nn.Module, dict]:
    """Run L encoder-only descent steps on the support window.

    Gradient sources: the prototype pull, the injected synthetic gradient,
    and (with labels) the rank loss. Each step recomputes the latents under
    the updated encoder. Batch-norm statistics stay frozen so the same code
    path serves deployment. The estimator, generator, and prototype are
    never written.
    """
    hyper = params.hyper
    t = hyper.frames_per_window
    if len(support) % t != 0:
        raise ShapeError(f"support length {len(support)} not a multiple of T={t}")
    if with_labels and support.ppg is None:
        raise MissingLabels("labeled adaptation requested but the support has no trace")

    encoder, estimator, generator = params.encoder, params.estimator, params.generator
    modes = (encoder.training, estimator.training, generator.training)
    encoder.eval(), estimator.eval(), generator.eval()
    dtype = next(encoder.parameters()).dtype
    frames = [
        torch.as_tensor(np.ascontiguousarray(np.moveaxis(w, 3, 1)), dtype=dtype)
        for w in _split_windows(support, t)
    ]
    targets = _window_targets(support, t, hyper.ranks) if with_labels else None
    proto = torch.as_tensor(params.z_proto, dtype=dtype)
    theta = [p for p in encoder.parameters() if p.requires_grad]
    stats = {"proto_loss": 0.0, "ord_loss": 0.0}

    try:
        for _ in range(steps):
            total = None
            proto_acc, ord_acc = 0.0, 0.0
            for w_idx, x in enumerate(frames):
                z = encoder(x)
                terms = []
                if use_proto:
                    l_proto = ((z - proto) ** 2).sum(dim=1).mean()
                    proto_acc += float(l_proto.detach())
                    terms.append(l_proto)
                if with_labels:
                    l_ord = ordinal_loss_torch(
                        estimator(z), targets[w_idx].to(dtype)
                    )
                    ord_acc += float(l_ord.detach())
                    terms.append(l_ord)
                if use_synth:
                    with torch.no_grad():
                        g = generator(z.detach())
                    terms.append(latent_surrogate(z, g))
                if not terms:
                    continue
                window_loss = sum(terms) / len(frames)
                total = window_loss if total is None else total + window_loss
            if total is None:
                break  # nothing to descend on
            grads = torch.autograd.grad(total, theta)
            _check_finite(grads, "adaptation")
            with torch.no_grad():
                for p, g in zip(theta, grads):
                    p -= alpha * g
            stats = {
                "proto_loss": proto_acc / len(frames),
                "ord_loss": ord_acc / len(frames),
            }
    finally:
        encoder.train(modes[0]), estimator.train(modes[1]), generator.train(modes[2])
    return encoder, stats


def learning_phase(
    params: ModelParams,
    query: Window,
    *,
    eta: float,
    gamma: float,
    use_synth: bool = True,
    update_proto: bool = True,
) -> dict:
    """Labeled query update, in order: psi on the synthetic-gradient loss
    against the frozen true gradient, then theta and phi on the rank loss
    (both gradients taken at the same pre-update point), then the prototype
    EMA from the query latents under the updated encoder.
    """
    if query.ppg is None:
        raise MissingLabels("learning phase requires a labeled query window")
    hyper = params.hyper
    t = hyper.frames_per_window
    encoder, estimator, generator = params.encoder, params.estimator, params.generator
    dtype = next(encoder.parameters()).dtype
    encoder.train(), estimator.train(), generator.train()

    windows = [
        torch.as_tensor(np.ascontiguousarray(np.moveaxis(w, 3, 1)), dtype=dtype)
        for w in _split_windows(query, t)
    ]
    targets = [tgt.to(dtype) for tgt in _window_targets(query, t, hyper.ranks)]

    latents, ord_losses = [], []
    for x, tgt in zip(windows, targets):
        z = encoder(x)
        latents.append(z)
        ord_losses.append(ordinal_loss_torch(estimator(z), tgt))
    l_ord = torch.stack(ord_losses).mean()

    stats = {"ord_loss": float(l_ord.detach()), "syn_loss": 0.0}

    # (1) generator update against the frozen per-window true gradients
    if use_synth:
        true_grads = torch.autograd.grad(
            sum(ord_losses), latents, retain_graph=True
        )
        syn_losses = [
            torch.mean((generator(z.detach()) - g.detach()) ** 2)
            for z, g in zip(latents, true_grads)
        ]
        l_syn = torch.stack(syn_losses).mean()
        psi = [p for p in generator.parameters() if p.requires_grad]
        g_psi = torch.autograd.grad(l_syn, psi)
        _check_finite(g_psi, "generator update")
        with torch.no_grad():
            for p, g in zip(psi, g_psi):
                p -= eta * g
        stats["syn_loss"] = float(l_syn.detach())

    # (2) + (3) encoder and estimator steps from one backward at the same point
    theta = [p for p in encoder.parameters() if p.requires_grad]
    phi = [p for p in estimator.parameters() if p.requires_grad]
    grads = torch.autograd.grad(l_ord, theta + phi)
    _check_finite(grads, "supervised update")
    with torch.no_grad():
        for p, g in zip(theta + phi, grads):
            p -= eta * g

    # (4) prototype EMA from inference-mode latents under the updated encoder;
    # gamma = 1 degenerates to no movement, so skip the arithmetic entirely
    if update_proto:
        if gamma < 1.0:
            encoder.eval()
            with torch.no_grad():
                means = [encoder(x).double().mean(dim=0).cpu().numpy() for x in windows]
            encoder.train()
            proto = update_global_prototype(Prototype(params.z_proto, 0), means, gamma)
            params.z_proto = proto.value
        params.proto_updates += 1
    return stats


def pretrain(params: ModelParams, dataset: list[SessionStream], config: TrainConfig,
             rng: np.random.Generator) -> list[dict]:
    """End-to-end supervised warm-up: theta and phi descend on the rank
    loss; the generator and prototype stay untouched.
    """
    if not dataset:
        raise EmptyDataset("pretraining needs at least one session")
    hyper = config.hyper
    t = hyper.frames_per_window
    encoder, estimator = params.encoder, params.estimator
    dtype = next(encoder.parameters()).dtype
    log = []
    for epoch in range(hyper.pretrain_epochs):
        encoder.train(), estimator.train()
        losses = []
        for task_idx in rng.permutation(len(dataset)):
            session = dataset[task_idx]
            max_start = len(session) - t
            for _ in range(config.pretrain_windows_per_task):
                start = int(rng.integers(0, max_start + 1))
                frames = session.frames.frames[start : start + t]
                x = torch.as_tensor(np.ascontiguousarray(np.moveaxis(frames, 3, 1)), dtype=dtype)
                tgt = torch.from_numpy(
                    window_target(session.ppg.samples[start : start + t], hyper.ranks)
                    .ranks.astype(np.float64)
                ).to(dtype)
                loss = ordinal_loss_torch(estimator(encoder(x)), tgt)
                pars = [p for m in (encoder, estimator) for p in m.parameters() if p.requires_grad]
                grads = torch.autograd.grad(loss, pars)
                _check_finite(grads, "pretraining")
                with torch.no_grad():
                    for p, g in zip(pars, grads):
                        p -= hyper.eta * g
                losses.append(float(loss.detach()))
        log.append({"epoch": epoch + 1, "ord_loss": float(np.mean(losses))})
    return log


def meta_train(
    dataset: list[SessionStream],
    config: TrainConfig,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Full training loop: pretraining, then per-epoch episodic passes.

    Each epoch shuffles the task pool into meta-batches of N tasks and runs
    `episodes_per_task` episodes per task: adaptation on the support window
    (labels included during training), then the learning phase on the
    query. Deterministic for a fixed seed.
    """
    if len(dataset) < 2:
        raise EmptyDataset(f"need at least 2 tasks, got {len(dataset)}")
    hyper = config.hyper
    rng = np.random.default_rng(hyper.seed)

    if params is None:
        cfgs = desk_configs(hyper) if config.preset == "desk" else paper_configs(hyper)
        params = init_params(*cfgs, seed=hyper.seed, hyper=hyper)

    episodes: list[list[Episode]] = [
        slice_episodes(s, hyper.frames_per_window, hyper.support_frames, hyper.query_frames)
        for s in dataset
    ]

    baseline = config.mode == "baseline"
    log: list[dict] = []
    if not baseline and hyper.pretrain_epochs > 0:
        for row in pretrain(params, dataset, config, rng):
            log.append({"phase": "pretrain", **row, "syn_loss": 0.0, "proto_loss": 0.0,
                        "wall_s": 0.0})

    n = hyper.tasks_per_batch
    for epoch in range(config.epochs):
        tic = time.perf_counter()
        order = rng.permutation(len(dataset))
        ord_losses, syn_losses, proto_losses = [], [], []
        for batch_start in range(0, len(order), n):
            for task_idx in order[batch_start : batch_start + n]:
                task_eps = episodes[task_idx]
                for _ in range(config.episodes_per_task):
                    ep = task_eps[int(rng.integers(len(task_eps)))]
                    if not baseline and hyper.adapt_steps > 0:
                        _, astats = adaptation_phase(
                            params,
                            ep.support,
                            alpha=hyper.alpha,
                            steps=hyper.adapt_steps,
                            with_labels=True,
                            use_proto=config.use_proto,
                            use_synth=config.use_synth,
                        )
                        proto_losses.append(astats["proto_loss"])
                    lstats = learning_phase(
                        params,
                        ep.query,
                        eta=hyper.eta,
                        gamma=hyper.gamma,
                        use_synth=config.use_synth and not baseline,
                        update_proto=config.use_proto and not baseline,
                    )
                    ord_losses.append(lstats["ord_loss"])
                    syn_losses.append(lstats["syn_loss"])
        row = {
            "phase": "meta" if not baseline else "baseline",
            "epoch": epoch + 1,
            "ord_loss": float(np.mean(ord_losses)),
            "syn_loss": float(np.mean(syn_losses)) if syn_losses else 0.0,
            "proto_loss": float(np.mean(proto_losses)) if proto_losses else 0.0,
            "wall_s": time.perf_counter() - tic,
        }
        log.append(row)
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, params)
    return params, log


def write_metrics_log(path, log: list[dict]):
    """Line-oriented delimited log: phase, epoch, losses, wall seconds."""
    cols = ("phase", "epoch", "ord_loss", "syn_loss", "proto_loss", "wall_s")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in log:
            fh.write(
                ",".join(
                    f"{row.get(c, 0.0):.8g}" if c not in ("phase",) else str(row.get(c, ""))
                    for c in cols
                )
                + "\n"
            )


def train_head_generator(
    params: ModelParams,
    dataset: list[SessionStream],
    *,
    epochs: int = 5,
    windows_per_task: int = 6,
    eta: float | None = None,
    seed: int = 1,
):
    """Fit a generator variant at the head output (for joint adaptation).

    The variant models the rank-loss gradient at the estimator's logits;
    injecting it there lets a caller adapt the encoder and estimator
    jointly. The main model is left untouched.
    """
    from .network import GeneratorConfig, GradientGenerator

    hyper = params.hyper
    t, s = hyper.frames_per_window, hyper.ranks
    eta = hyper.eta if eta is None else eta
    dtype = next(params.encoder.parameters()).dtype
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        head_gen = GradientGenerator(GeneratorConfig(latent_dim=s, frames=t)).to(dtype)

    encoder, estimator = params.encoder, params.estimator
    enc_mode, est_mode = encoder.training, estimator.training
    encoder.eval(), estimator.eval()
    rng = np.random.default_rng(seed)
    try:
        for _ in range(epochs):
            head_gen.train()
            for task_idx in rng.permutation(len(dataset)):
                session = dataset[task_idx]
                max_start = len(session) - t
                for _ in range(windows_per_task):
                    start = int(rng.integers(0, max_start + 1))
                    frames = session.frames.frames[start : start + t]
                    x = torch.as_tensor(
                        np.ascontiguousarray(np.moveaxis(frames, 3, 1)), dtype=dtype
                    )
                    tgt = torch.from_numpy(
                        window_target(session.ppg.samples[start : start + t], s)
                        .ranks.astype(np.float64)
                    ).to(dtype)
                    with torch.no_grad():
                        z = encoder(x)
                    logits = estimator.logits(z).detach().requires_grad_(True)
                    loss = ordinal_loss_torch(torch.sigmoid(logits), tgt)
                    (true_g,) = torch.autograd.grad(loss, logits)
                    l_syn = torch.mean((head_gen(logits.detach()) - true_g.detach()) ** 2)
                    psi2 = [p for p in head_gen.parameters() if p.requires_grad]
                    grads = torch.autograd.grad(l_syn, psi2)
                    _check_finite(grads, "head generator update")
                    with torch.no_grad():
                        for p, g in zip(psi2, grads):
                            p -= eta * g
    finally:
        encoder.train(enc_mode), estimator.train(est_mode)
    head_gen.eval()
    return head_gen
