"""Video watermarking by channel folding: adapt image watermark nets to clips.

A clip of L RGB frames is reshaped into one 3L-channel pseudo-image so 2D
encoder/decoder networks can embed and recover bit payloads; 3D block
variants keep the temporal axis instead. Robustness comes from training
against a simulated attack layer (compression, temporal edits, pixel
noise), with non-differentiable compression bridged by a straight-through
gradient wrapper.
"""

from .blocks import (
    BLOCK_KINDS,
    ConvBlock,
    ConvBlockSpec,
    CostReport,
    build_block,
    count_flops,
    count_params,
    mid_channels,
)
from .distortions import (
    DISTORTION_KINDS,
    AttackOutcome,
    DistortionSpec,
    DistortionTemplate,
    apply_distortion,
    evaluation_distortion_set,
    forward_asl,
    h264_roundtrip,
    parse_distortion_spec,
    sample_distortion,
    training_distortion_set,
)
from .evaluate import EvaluationReport, evaluate_models, sweep_crf, write_report_files
from .metrics import (
    STAGE1_WEIGHTS,
    STAGE2_WEIGHTS,
    FrameQualityStats,
    LossWeights,
    bit_accuracy,
    decoder_loss,
    encoder_loss,
    frame_loss,
    per_frame_psnr,
    psnr,
    total_loss,
)
from .model import (
    Decoder,
    Encoder,
    Message,
    ModelConfig,
    build_models,
    decode,
    encode,
    threshold_message,
)
from .training import (
    CheckpointMismatchError,
    TrainingConfig,
    TrainingDivergedError,
    TrainResult,
    load_checkpoint,
    load_models,
    save_checkpoint,
    train_stage,
)
from .video import (
    ClipManifest,
    ManifestEntry,
    MalformedInputError,
    PseudoImage,
    VideoClip,
    fold_video,
    load_clip,
    sample_clips,
    unfold_video,
)

__version__ = "0.1.0"
