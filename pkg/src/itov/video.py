"""Clip containers, the channel-fold reshape, and clip loading/sampling.

A video clip is an (L, 3, H, W) float tensor in [0, 1]. Folding merges the
frame axis into the channel axis, giving a (3L, H, W) pseudo-image that any
image network can process; unfolding is the exact inverse. The interleaving
is frame-major: pseudo channel 3*i + c holds channel c of frame i.
"""

import functools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import codec


class MalformedInputError(ValueError):
    """Input tensor violates a clip/pseudo-image shape invariant."""


def _validate_pixels(pixels, kind):
    if not torch.is_tensor(pixels) or not pixels.is_floating_point():
        raise MalformedInputError(f"{kind} pixels must be a floating-point tensor")
    if pixels.min() < 0 or pixels.max() > 1:
        raise MalformedInputError(f"{kind} pixel values must lie in [0, 1]")


@dataclass
class VideoClip:
    """Real-valued pixel tensor of shape (L, 3, H, W) in [0, 1]."""

    pixels: torch.Tensor
    frame_rate: float = 30.0

    def __post_init__(self):
        p = self.pixels
        if not torch.is_tensor(p) or p.ndim != 4 or p.shape[1] != 3:
            raise MalformedInputError(f"clip pixels must have shape (L, 3, H, W), got {tuple(getattr(p, 'shape', ()))}")
        if p.shape[0] < 1:
            raise MalformedInputError("clip needs at least one frame")
        if p.shape[2] % 8 != 0 or p.shape[3] % 8 != 0:
            raise MalformedInputError(f"H and W must be divisible by 8, got {p.shape[2]}x{p.shape[3]}")
        _validate_pixels(p, "clip")

    @property
    def n_frames(self):
        return self.pixels.shape[0]

    @property
    def height(self):
        return self.pixels.shape[2]

    @property
    def width(self):
        return self.pixels.shape[3]

    def to_uint8(self):
        """(L, H, W, 3) uint8 frames for the codec boundary: round(x*255), clamped."""
        arr = (self.pixels.detach().cpu().clamp(0, 1) * 255.0).round().to(torch.uint8)
        return arr.permute(0, 2, 3, 1).numpy()

    @classmethod
    def from_uint8(cls, frames, frame_rate=30.0):
        pixels = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2).float() / 255.0
        return cls(pixels, frame_rate=frame_rate)


@dataclass
class PseudoImage:
    """(3L, H, W) channel-folded view of a clip."""

    pixels: torch.Tensor
    frame_count: int

    def __post_init__(self):
        p = self.pixels
        if not torch.is_tensor(p) or p.ndim != 3:
            raise MalformedInputError(f"pseudo-image pixels must have shape (C, H, W), got {tuple(getattr(p, 'shape', ()))}")
        if p.shape[0] % 3 != 0:
            raise MalformedInputError(f"pseudo-image channel count must be a multiple of 3, got {p.shape[0]}")
        if p.shape[0] != 3 * self.frame_count:
            raise MalformedInputError(
                f"channel count {p.shape[0]} does not match 3 x frame_count = {3 * self.frame_count}"
            )
        _validate_pixels(p, "pseudo-image")


def fold_clip_tensor(pixels):
    """(..., L, 3, H, W) -> (..., 3L, H, W), frame-major channel interleave."""
    shape = pixels.shape
    return pixels.reshape(*shape[:-4], shape[-4] * 3, shape[-2], shape[-1])


def unfold_clip_tensor(pixels, frame_count=None):
    """(..., 3L, H, W) -> (..., L, 3, H, W), inverse of fold_clip_tensor."""
    channels = pixels.shape[-3]
    if channels % 3 != 0:
        raise MalformedInputError(f"channel count {channels} is not divisible by 3")
    n = channels // 3
    if frame_count is not None and frame_count != n:
        raise MalformedInputError(f"channel count {channels} does not match frame_count {frame_count}")
    shape = pixels.shape
    return pixels.reshape(*shape[:-3], n, 3, shape[-2], shape[-1])


def fold_video(clip: VideoClip) -> PseudoImage:
    """Merge the frame axis into channels: output[3i + c] is channel c of frame i."""
    return PseudoImage(fold_clip_tensor(clip.pixels), frame_count=clip.n_frames)


def unfold_video(img: PseudoImage, frame_rate=30.0) -> VideoClip:
    """Exact inverse of fold_video."""
    return VideoClip(unfold_clip_tensor(img.pixels, img.frame_count), frame_rate=frame_rate)


@dataclass
class ManifestEntry:
    path: str
    n_frames: int
    width: int
    height: int


@dataclass
class ClipManifest:
    """List of source videos that clips are sampled from."""

    entries: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.entries and not isinstance(self.entries[0], ManifestEntry):
            self.entries = [ManifestEntry(**e) for e in self.entries]

    @classmethod
    def load(cls, path):
        with open(path) as f:
            data = json.load(f)
        if isinstance(data, dict):
            entries, seed = data["entries"], data.get("seed", 0)
        else:
            entries, seed = data, 0
        manifest = cls([ManifestEntry(**e) for e in entries], seed=seed)
        manifest.validate()
        return manifest

    def save(self, path):
        data = {
            "entries": [vars(e) for e in self.entries],
            "seed": self.seed,
        }
        with open(path, "w") as f:
            json.dump(data, f, indent=2)

    def validate(self):
        for e in self.entries:
            if not Path(e.path).is_file():
                raise FileNotFoundError(f"manifest references missing video {e.path}")


def load_clip(path, start_frame=0, frame_count=None, crop_box=None, frame_rate=30.0) -> VideoClip:
    """Load a clip window from a video file, scaled to [0, 1].

    crop_box is (top, left, height, width); None keeps the full frame.
    """
    frames = codec.read_video_frames(path, start_frame=start_frame, frame_count=frame_count)
    if crop_box is not None:
        top, left, height, width = crop_box
        if top < 0 or left < 0 or top + height > frames.shape[1] or left + width > frames.shape[2]:
            raise ValueError(f"crop box {crop_box} exceeds frame size {frames.shape[1]}x{frames.shape[2]}")
        frames = frames[:, top:top + height, left:left + width]
    return VideoClip.from_uint8(frames, frame_rate=frame_rate)


@functools.lru_cache(maxsize=32)
def _decode_cached(path, mtime_ns):
    return codec.read_video_frames(path)


def _read_frames_cached(path):
    # keyed on mtime so a rewritten file invalidates its cache slot
    return _decode_cached(str(path), os.stat(path).st_mtime_ns)


def sample_clips(manifest: ClipManifest, count, dims, seed=None):
    """Draw `count` clips of dims (L, H, W) with uniform spatio-temporal placement.

    Deterministic for a fixed seed (falls back to the manifest seed). Decoded
    files are cached process-wide so a training loop does not re-spawn the
    codec for every batch.
    """
    if not manifest.entries:
        raise ValueError("cannot sample from an empty manifest")
    n_frames, height, width = dims
    rng = np.random.default_rng(manifest.seed if seed is None else seed)
    clips = []
    for _ in range(count):
        entry = manifest.entries[rng.integers(len(manifest.entries))]
        if entry.n_frames < n_frames:
            raise ValueError(f"{entry.path} has {entry.n_frames} frames, need {n_frames}")
        if entry.height < height or entry.width < width:
            raise ValueError(f"{entry.path} is {entry.height}x{entry.width}, need {height}x{width}")
        frames = _read_frames_cached(entry.path)
        t0 = int(rng.integers(entry.n_frames - n_frames + 1))
        top = int(rng.integers(entry.height - height + 1))
        left = int(rng.integers(entry.width - width + 1))
        window = frames[t0:t0 + n_frames, top:top + height, left:left + width]
        clips.append(VideoClip.from_uint8(window))
    return clips
