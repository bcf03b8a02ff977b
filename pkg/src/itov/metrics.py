"""Training losses and evaluation metrics.

All pixel losses assume [0, 1]-scaled tensors with the frame axis fourth
from the right, i.e. clips shaped (L, 3, H, W) or batches (B, L, 3, H, W).
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class LossWeights:
    """Weights balancing invisibility, robustness, and per-frame evenness."""

    encoder: float = 1.0
    decoder: float = 0.1
    frame: float = 0.0

    def __post_init__(self):
        if min(self.encoder, self.decoder, self.frame) < 0:
            raise ValueError("loss weights must be non-negative")
        if max(self.encoder, self.decoder, self.frame) <= 0:
            raise ValueError("at least one loss weight must be positive")


# two-stage schedule: distortion-free warmup, then robustness training
STAGE1_WEIGHTS = LossWeights(encoder=1.0, decoder=0.1, frame=0.0)
STAGE2_WEIGHTS = LossWeights(encoder=1.0, decoder=0.01, frame=0.05)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def encoder_loss(cover, watermarked):
    """Mean squared pixel error between cover and watermarked video."""
    _check_same_shape(cover, watermarked)
    return ((cover - watermarked) ** 2).mean()


def frame_loss(cover, watermarked):
    """Sum over frames of the squared per-frame mean absolute difference.

    Penalizing each frame's embedding strength quadratically pushes the
    watermark energy toward an even split across frames. The per-frame
    difference is a mean (not a sum) over pixels so the loss scale is
    resolution-independent. Batched inputs are averaged over the batch.
    """
    _check_same_shape(cover, watermarked)
    if cover.dim() < 4:
        raise ValueError(f"expected (..., L, 3, H, W) tensors, got shape {tuple(cover.shape)}")
    per_frame = (cover - watermarked).abs().mean(dim=(-3, -2, -1))
    total = (per_frame ** 2).sum(dim=-1)
    return total.mean()


def decoder_loss(message_bits, logits):
    """Mean squared error between binary targets and decoder logits."""
    _check_same_shape(message_bits, logits)
    return ((message_bits - logits) ** 2).mean()


def total_loss(cover, watermarked, message_bits, logits, weights: LossWeights):
    """Weighted sum of the three objectives."""
    loss = weights.encoder * encoder_loss(cover, watermarked)
    loss = loss + weights.decoder * decoder_loss(message_bits, logits)
    if weights.frame > 0:
        loss = loss + weights.frame * frame_loss(cover, watermarked)
    return loss


def _as_bit_array(bits):
    if hasattr(bits, "bits"):
        bits = bits.bits
    if torch.is_tensor(bits):
        bits = bits.detach().cpu().numpy()
    arr = np.asarray(bits)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("message bits must be strictly binary")
    return arr.astype(np.int64).ravel()


def bit_accuracy(message, predicted):
    """Percentage of message bits recovered correctly."""
    a, b = _as_bit_array(message), _as_bit_array(predicted)
    if a.shape != b.shape:
        raise ValueError(f"message length mismatch: {a.size} vs {b.size}")
    return float((1.0 - np.abs(a - b).sum() / a.size) * 100.0)


def mse_to_psnr(mse, max_value=1.0):
    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / mse)


def psnr(cover, watermarked):
    """Peak signal-to-noise ratio in dB over the whole clip, MAX = 1.0.

    Identical inputs report +inf; callers aggregating PSNRs exclude the
    infinite sentinel from means.
    """
    _check_same_shape(cover, watermarked)
    mse = float(((cover - watermarked) ** 2).mean())
    return mse_to_psnr(mse)


@dataclass
class FrameQualityStats:
    """Per-frame PSNR values plus summary statistics (population std).

    Frames with zero error contribute +inf and are excluded from mean/std.
    """

    per_frame_psnr: list
    mean: float = field(init=False)
    std: float = field(init=False)
    min: float = field(init=False)

    def __post_init__(self):
        finite = [v for v in self.per_frame_psnr if math.isfinite(v)]
        if finite:
            self.mean = float(np.mean(finite))
            self.std = float(np.std(finite))
            self.min = float(np.min(finite))
        else:
            self.mean, self.std, self.min = math.inf, 0.0, math.inf

    def to_dict(self):
        return {
            "per_frame_psnr": list(self.per_frame_psnr),
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
        }


def per_frame_mse(cover, watermarked):
    """(L,) per-frame mean squared error; averaged over the batch if present."""
    _check_same_shape(cover, watermarked)
    per_frame = ((cover - watermarked) ** 2).mean(dim=(-3, -2, -1))
    if per_frame.dim() > 1:
        per_frame = per_frame.mean(dim=tuple(range(per_frame.dim() - 1)))
    return per_frame


def per_frame_psnr(cover, watermarked) -> FrameQualityStats:
    values = [mse_to_psnr(float(m)) for m in per_frame_mse(cover, watermarked)]
    return FrameQualityStats(values)
