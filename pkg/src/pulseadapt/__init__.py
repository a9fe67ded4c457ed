"""Remote pulse estimation with episodic training and label-free test-time
adaptation: a frame encoder feeds a recurrent rank estimator; at deployment
the encoder alone is adapted on the first seconds of a stream using a
prototype pull and a learned synthetic gradient."""

from .core import (
    Episode,
    FrameSequence,
    HyperParams,
    LatentSequence,
    OrdinalTarget,
    PpgTrace,
    SessionStream,
    Window,
    validate_alignment,
)
from .network import (
    EncoderConfig,
    EstimatorConfig,
    GeneratorConfig,
    ModelParams,
    desk_configs,
    encode_frames,
    estimate_rppg,
    generate_synthetic_gradient,
    grad_at_z_of_ordinal_loss,
    init_params,
    inject_gradient_update,
    load_checkpoint,
    paper_configs,
    save_checkpoint,
)
from .ordinal import (
    RankProbabilities,
    decode_ordinal,
    encode_ordinal,
    normalize_segment,
    ordinal_loss,
)
from .transduction import Prototype, proto_loss, syn_loss, task_prototype, update_global_prototype
from .trainer import TrainConfig, adaptation_phase, learning_phase, meta_train, pretrain
from .deploy import InferenceResult, inductive_infer, transductive_infer
from .synthdata import ShiftSpec, SynthTaskSpec, gen_task_pool, synth_ppg, synth_video
from .ingest import SessionManifest, load_session, resample_ppg, slice_episodes, write_session
from .evaluate import (
    HrEstimate,
    MetricsReport,
    compute_metrics,
    detect_peaks,
    hr_from_peaks,
    sweep_adaptation_steps,
)

__version__ = "0.1.0"
