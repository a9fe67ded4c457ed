import numpy as np
import pytest
import torch

from pulseadapt.core import FrameSequence, HyperParams, PpgTrace, SessionStream, Window
from pulseadapt.network import (
    EncoderConfig,
    EstimatorConfig,
    GeneratorConfig,
    init_params,
)

torch.set_num_threads(2)


@pytest.fixture
def tiny_hyper():
    return HyperParams(
        eta=1e-3,
        alpha=1e-3,
        gamma=0.8,
        adapt_steps=2,
        frames_per_window=6,
        ranks=5,
        support_frames=6,
        query_frames=12,
        pretrain_epochs=1,
        tasks_per_batch=2,
        seed=0,
    )


@pytest.fixture
def tiny_configs():
    enc = EncoderConfig(input_size=8, widths=(4, 6))
    est = EstimatorConfig(latent_dim=6, lstm_hidden=3, mlp_hidden=5, ranks=5)
    gen = GeneratorConfig(latent_dim=6, frames=6)
    return enc, est, gen


@pytest.fixture
def tiny_params(tiny_configs, tiny_hyper):
    return init_params(*tiny_configs, seed=0, hyper=tiny_hyper)


@pytest.fixture
def tiny_params_f64(tiny_configs, tiny_hyper):
    return init_params(*tiny_configs, seed=0, hyper=tiny_hyper, dtype=torch.float64)


def make_frames(n, k=8, fps=6.0, seed=0):
    rng = np.random.default_rng(seed)
    return FrameSequence(rng.random((n, k, k, 3), dtype=np.float32), fps)


def make_window(n, k=8, fps=6.0, seed=0, labeled=True):
    frames = make_frames(n, k, fps, seed)
    ppg = PpgTrace(np.sin(np.arange(n) * 0.9) + 0.1 * np.arange(n) % 1.0, fps) if labeled else None
    return Window(frames, ppg)


def make_session(n=48, k=8, fps=6.0, seed=0):
    frames = make_frames(n, k, fps, seed)
    ppg = PpgTrace(np.sin(np.arange(n) * 0.9), fps)
    return SessionStream(frames, ppg, f"task_{seed}")


@pytest.fixture
def tiny_session():
    return make_session()
