"""Two-stage training: a noise-free warmup, then robustness training.

The warmup stage sees no attacks (identity only, no frame-evenness term) so
the encoder/decoder pair first learns a recoverable embedding. The second
stage starts from the warmup weights and samples one attack per batch;
differentiable attacks run in-graph, compression goes through the
straight-through wrapper so decoder gradients skip the codec.

Every stochastic choice in a step (clip sampling, message bits, attack kind,
attack randomness) is derived from (config.seed, step), so training resumed
from a mid-run checkpoint reproduces the uninterrupted run bit for bit.
"""

import csv
import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .distortions import (
    DistortionTemplate,
    apply_distortion_tensor,
    forward_asl_tensor,
    sample_distortion,
    training_distortion_set,
)
from .metrics import (
    STAGE1_WEIGHTS,
    STAGE2_WEIGHTS,
    LossWeights,
    bit_accuracy,
    decoder_loss,
    encoder_loss,
    frame_loss,
    psnr,
)
from .model import Decoder, Encoder, ModelConfig, build_models
from .video import ClipManifest, sample_clips

STAGE_NOISE_FREE = "noise_free"
STAGE_WITH_NOISE = "with_noise"
STAGES = (STAGE_NOISE_FREE, STAGE_WITH_NOISE)

LOG_FIELDS = (
    "step",
    "stage",
    "distortion",
    "loss",
    "loss_encoder",
    "loss_decoder",
    "loss_frame",
    "bit_accuracy",
    "psnr",
)


class TrainingDivergedError(RuntimeError):
    """Raised when a loss goes non-finite instead of silently corrupting weights."""


class CheckpointMismatchError(RuntimeError):
    """Raised when a checkpoint's model geometry disagrees with the request."""


def stage_weights(stage) -> LossWeights:
    return STAGE1_WEIGHTS if stage == STAGE_NOISE_FREE else STAGE2_WEIGHTS


def stage_templates(stage):
    if stage == STAGE_NOISE_FREE:
        return [DistortionTemplate("identity")]
    return training_distortion_set()


@dataclass
class TrainingConfig:
    model: ModelConfig
    stage: str = STAGE_NOISE_FREE
    steps: int = 1000
    batch_size: int = 16
    learning_rate: float = 1e-5
    weights: LossWeights = None
    templates: list = None
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint
    early_stop_accuracy: float = None
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.weights is None:
            self.weights = stage_weights(self.stage)
        if self.templates is None:
            self.templates = stage_templates(self.stage)
        if not self.templates:
            raise ValueError("training needs at least one distortion template")
        if self.stage == STAGE_NOISE_FREE:
            kinds = {t.kind for t in self.templates}
            if kinds != {"identity"}:
                raise ValueError("the noise-free stage trains against identity only")
            if self.weights.frame != 0:
                raise ValueError("the noise-free stage does not use the frame evenness term")

    def to_dict(self):
        w = self.weights
        return {
            "model": self.model.to_dict(),
            "stage": self.stage,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weights": {"encoder": w.encoder, "decoder": w.decoder, "frame": w.frame},
            "templates": [t.to_dict() for t in self.templates],
            "seed": self.seed,
            "log_every": self.log_every,
            "checkpoint_every": self.checkpoint_every,
            "early_stop_accuracy": self.early_stop_accuracy,
            "early_stop_patience": self.early_stop_patience,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        if d.get("weights") is not None:
            d["weights"] = LossWeights(**d["weights"])
        if d.get("templates") is not None:
            d["templates"] = [DistortionTemplate.from_dict(t) for t in d["templates"]]
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def content_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _sidecar_path(path):
    return Path(path).with_suffix(".json")


def save_checkpoint(path, encoder: Encoder, decoder: Decoder, stage, step,
                    optimizer=None, train_config: TrainingConfig = None, extra_state=None):
    """Atomic checkpoint write plus a human-readable geometry sidecar."""
    path = Path(path)
    payload = {
        "model_config": encoder.config.to_dict(),
        "encoder": encoder.state_dict(),
        "decoder": decoder.state_dict(),
        "stage": stage,
        "step": int(step),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if train_config is not None:
        payload["train_config"] = train_config.to_dict()
        payload["config_hash"] = train_config.content_hash()
    if extra_state:
        payload.update(extra_state)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)

    cfg = encoder.config
    sidecar = {
        "message_length": cfg.message_length,
        "frames": cfg.frames,
        "height": cfg.height,
        "width": cfg.width,
        "block_kind": cfg.block_kind,
        "strength_factor": cfg.strength_factor,
        "stage": stage,
        "step": int(step),
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def load_checkpoint(path):
    """Raw checkpoint payload (state dicts keyed by side, plus metadata)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    return torch.load(path, map_location="cpu")


def load_models(path):
    """Rebuild the encoder/decoder pair stored in a checkpoint."""
    payload = load_checkpoint(path)
    config = ModelConfig.from_dict(payload["model_config"])
    encoder, decoder = Encoder(config), Decoder(config)
    encoder.load_state_dict(payload["encoder"])
    decoder.load_state_dict(payload["decoder"])
    encoder.eval()
    decoder.eval()
    return encoder, decoder, payload


def _check_geometry(payload, model_config: ModelConfig, path):
    stored = ModelConfig.from_dict(payload["model_config"])
    fields = ("message_length", "frames", "height", "width", "block_kind", "channels", "use_se")
    for name in fields:
        if getattr(stored, name) != getattr(model_config, name):
            raise CheckpointMismatchError(
                f"checkpoint {path} was trained with {name}={getattr(stored, name)!r}, "
                f"requested {getattr(model_config, name)!r}"
            )


def _step_rng(seed, step, stream):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step, stream)))


def _attack_batch(watermarked, spec, seeds):
    """One sampled attack over a (B, L, 3, H, W) batch, one RNG seed per clip."""
    out = []
    for i in range(watermarked.shape[0]):
        if spec.differentiable:
            out.append(apply_distortion_tensor(watermarked[i], spec, seed=seeds[i]))
        else:
            # keep the straight-through tensor: codec bytes forward, identity backward
            pseudo, _ = forward_asl_tensor(watermarked[i], spec, seed=seeds[i])
            out.append(pseudo)
    return torch.stack(out)


@dataclass
class TrainResult:
    checkpoint_path: Path
    steps_run: int
    stopped_early: bool
    history: list = field(default_factory=list)


def train_stage(config: TrainingConfig, manifest: ClipManifest, out_dir,
                init_from=None, resume_from=None) -> TrainResult:
    """Run one training stage to completion (or early stop) and checkpoint it.

    init_from seeds the weights from a previous stage's checkpoint but starts
    a fresh optimizer at step 0. resume_from continues an interrupted run of
    this same stage: optimizer state and step counter are restored, and the
    remaining steps replay exactly what the uninterrupted run would have done.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if init_from is not None and resume_from is not None:
        raise ValueError("pass either init_from or resume_from, not both")
    if config.stage == STAGE_WITH_NOISE and init_from is None and resume_from is None:
        raise ValueError(
            "the robustness stage starts from a noise-free checkpoint; pass init_from"
        )

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        _check_geometry(payload, config.model, resume_from)
        if payload.get("stage") != config.stage:
            raise CheckpointMismatchError(
                f"cannot resume stage {config.stage!r} from a {payload.get('stage')!r} checkpoint"
            )
        stored_hash = payload.get("config_hash")
        if stored_hash is not None and stored_hash != config.content_hash():
            warnings.warn(
                f"resuming {resume_from} with a training config that differs from the one "
                "it was saved with; the replayed steps will not match the original run",
                stacklevel=2,
            )
        encoder, decoder = Encoder(config.model), Decoder(config.model)
        encoder.load_state_dict(payload["encoder"])
        decoder.load_state_dict(payload["decoder"])
        start_step = int(payload["step"])
        start_streak = int(payload.get("early_stop_streak", 0))
    elif init_from is not None:
        payload = load_checkpoint(init_from)
        _check_geometry(payload, config.model, init_from)
        if config.stage == STAGE_WITH_NOISE and payload.get("stage") != STAGE_NOISE_FREE:
            raise CheckpointMismatchError(
                f"the robustness stage warm-starts from a {STAGE_NOISE_FREE!r} checkpoint, "
                f"got one from stage {payload.get('stage')!r}"
            )
        encoder, decoder = Encoder(config.model), Decoder(config.model)
        encoder.load_state_dict(payload["encoder"])
        decoder.load_state_dict(payload["decoder"])
        start_step = 0
        start_streak = 0
    else:
        encoder, decoder = build_models(config.model)
        start_step = 0
        start_streak = 0

    encoder.train()
    decoder.train()
    params = list(encoder.parameters()) + list(decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    if resume_from is not None and "optimizer" in payload:
        optimizer.load_state_dict(payload["optimizer"])

    dims = (config.model.frames, config.model.height, config.model.width)
    log_path = out_dir / "training_log.csv"
    write_header = not log_path.exists()
    history = []
    stopped_early = False
    streak = start_streak

    log_file = open(log_path, "a", newline="")
    writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
    if write_header:
        writer.writeheader()

    try:
        step = start_step
        while step < config.steps:
            clips = sample_clips(
                manifest, config.batch_size, dims,
                seed=np.random.SeedSequence(entropy=config.seed, spawn_key=(step, 0)),
            )
            covers = torch.stack([c.pixels for c in clips])
            bits_np = _step_rng(config.seed, step, 1).integers(0, 2, size=(config.batch_size, config.model.message_length))
            bits = torch.from_numpy(bits_np).to(torch.float32)

            rng_attack = _step_rng(config.seed, step, 2)
            spec = sample_distortion(config.templates, rng=rng_attack)
            seeds = [int(s) for s in rng_attack.integers(0, 2 ** 31 - 1, size=config.batch_size)]

            watermarked = encoder.watermark_clip_batch(covers, bits)
            attacked = _attack_batch(watermarked, spec, seeds)
            logits = decoder.decode_clip_batch(attacked)

            le = encoder_loss(covers, watermarked)
            ld = decoder_loss(bits, logits)
            lf = frame_loss(covers, watermarked) if config.weights.frame > 0 else torch.zeros(())
            loss = config.weights.encoder * le + config.weights.decoder * ld + config.weights.frame * lf

            if not torch.isfinite(loss):
                detail = {
                    "step": step,
                    "stage": config.stage,
                    "distortion": spec.describe(),
                    "loss_encoder": float(le.detach()),
                    "loss_decoder": float(ld.detach()),
                    "loss_frame": float(lf.detach()),
                }
                (out_dir / "diverged.json").write_text(json.dumps(detail, indent=2) + "\n")
                raise TrainingDivergedError(f"non-finite loss at step {step}: {detail}")

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1

            pred = (logits.detach() >= 0.5).to(torch.int64)
            acc = bit_accuracy(bits_np, pred)
            row = {
                "step": step,
                "stage": config.stage,
                "distortion": spec.describe(),
                "loss": float(loss.detach()),
                "loss_encoder": float(le.detach()),
                "loss_decoder": float(ld.detach()),
                "loss_frame": float(lf.detach()),
                "bit_accuracy": acc,
                "psnr": psnr(covers, watermarked.detach()),
            }
            if step % config.log_every == 0 or step == config.steps:
                writer.writerow(row)
                log_file.flush()
                history.append(row)

            if config.early_stop_accuracy is not None:
                streak = streak + 1 if acc >= config.early_stop_accuracy else 0

            if config.checkpoint_every and step % config.checkpoint_every == 0 and step < config.steps:
                save_checkpoint(
                    out_dir / f"checkpoint_step{step:06d}.pt",
                    encoder, decoder, config.stage, step,
                    optimizer=optimizer, train_config=config,
                    extra_state={"early_stop_streak": streak},
                )

            if config.early_stop_accuracy is not None:
                if streak >= config.early_stop_patience:
                    stopped_early = True
                    if not history or history[-1]["step"] != step:
                        writer.writerow(row)
                        log_file.flush()
                        history.append(row)
                    break
    finally:
        log_file.close()

    final_path = save_checkpoint(
        out_dir / f"{config.stage}_final.pt",
        encoder, decoder, config.stage, step,
        optimizer=optimizer, train_config=config,
        extra_state={"early_stop_streak": streak, "history": history},
    )
    return TrainResult(checkpoint_path=final_path, steps_run=step, stopped_early=stopped_early, history=history)
