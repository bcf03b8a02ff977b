"""Reference watermark encoder/decoder, parameterized by conv block kind.

The encoder runs a cover-feature branch and a message-expansion branch in
parallel, concatenates them on the channel axis, generates a residual
watermark, and adds it to the cover scaled by a strength factor. The decoder
downsamples three times, pools globally, and maps to one logit per message
bit. 2D block kinds see channel-folded clips; 3D kinds keep the temporal
axis and receive the message grid replicated across it.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .blocks import (
    BLOCK_KINDS,
    ConvBlock,
    ConvBlockSpec,
    init_module_weights,
)
from .video import VideoClip, fold_clip_tensor, unfold_clip_tensor


@dataclass(frozen=True)
class Message:
    """Fixed-length binary payload."""

    bits: tuple

    def __post_init__(self):
        if not self.bits or any(b not in (0, 1) for b in self.bits):
            raise ValueError("message bits must be a non-empty sequence of 0/1")

    def __len__(self):
        return len(self.bits)

    @classmethod
    def random(cls, length, rng=None, seed=None):
        if rng is None:
            rng = np.random.default_rng(seed)
        return cls(tuple(int(b) for b in rng.integers(0, 2, size=length)))

    @classmethod
    def from_hex(cls, text, length):
        if length % 4 != 0:
            raise ValueError("hex messages need a bit length divisible by 4")
        digits = length // 4
        if len(text) != digits:
            raise ValueError(f"expected {digits} hex digits for {length} bits, got {len(text)}")
        value = int(text, 16)
        return cls(tuple((value >> (length - 1 - i)) & 1 for i in range(length)))

    def to_hex(self):
        if len(self.bits) % 4 != 0:
            raise ValueError("hex form needs a bit length divisible by 4")
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return format(value, f"0{len(self.bits) // 4}x")

    def to_tensor(self, dtype=torch.float32):
        return torch.tensor(self.bits, dtype=dtype)

    def complement(self):
        return Message(tuple(1 - b for b in self.bits))


def threshold_message(logits) -> Message:
    """Binarize decoder logits at 0.5."""
    if torch.is_tensor(logits):
        logits = logits.detach().cpu().numpy()
    arr = np.asarray(logits).ravel()
    return Message(tuple(int(v >= 0.5) for v in arr))


@dataclass
class ModelConfig:
    message_length: int = 96
    frames: int = 8
    height: int = 128
    width: int = 128
    block_kind: str = "depthwise2d"
    channels: int = 64
    strength_factor: float = 1.0
    use_se: bool = False
    init_seed: int = 0

    def __post_init__(self):
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.block_kind!r}")
        if self.height % 8 or self.width % 8:
            raise ValueError("height and width must be divisible by 8")
        if self.message_length < 1 or self.frames < 1 or self.channels < 1:
            raise ValueError("message_length, frames, and channels must be >= 1")
        if self.strength_factor < 0:
            raise ValueError("strength factor must be >= 0")

    @property
    def is_2d(self):
        return self.block_kind in ("regular2d", "depthwise2d")

    @property
    def grid_size(self):
        # message grid before three 2x transposed upsampling stages
        return self.height // 8, self.width // 8

    def to_dict(self):
        return {
            "message_length": self.message_length,
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
            "block_kind": self.block_kind,
            "channels": self.channels,
            "strength_factor": self.strength_factor,
            "use_se": self.use_se,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class SqueezeExcite(nn.Module):
    """Channel reweighting by globally pooled gates."""

    def __init__(self, channels, reduction=8, spatial_dims=2):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.spatial_dims = spatial_dims

    def forward(self, x):
        pooled = x.mean(dim=tuple(range(2, 2 + self.spatial_dims)))
        gate = torch.sigmoid(self.fc2(torch.relu(self.fc1(pooled))))
        return x * gate.view(*gate.shape, *([1] * self.spatial_dims))


def _block(cfg: ModelConfig, cin, cout, stride=1):
    spec = ConvBlockSpec(cfg.block_kind, cin, cout, stride=stride)
    block = ConvBlock(spec)
    if cfg.use_se:
        return nn.Sequential(block, SqueezeExcite(cout, spatial_dims=2 if cfg.is_2d else 3))
    return block


def _upsample_stage(cfg: ModelConfig):
    c = cfg.channels
    if cfg.is_2d:
        conv = nn.ConvTranspose2d(c, c, 4, stride=2, padding=1)
        norm = nn.InstanceNorm2d(c)
    else:
        conv = nn.ConvTranspose3d(c, c, (1, 4, 4), stride=(1, 2, 2), padding=(0, 1, 1))
        norm = nn.InstanceNorm3d(c)
    return nn.Sequential(conv, norm, nn.ReLU(inplace=True))


class Encoder(nn.Module):
    """Embeds a bit vector into a clip as a strength-scaled residual."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.channels
        in_ch = 3 * config.frames if config.is_2d else 3

        self.cover_processor = nn.Sequential(
            _block(config, in_ch, c),
            _block(config, c, c),
            _block(config, c, c),
            _block(config, c, c),
        )
        gh, gw = config.grid_size
        self.message_project = nn.Linear(config.message_length, c * gh * gw)
        self.message_upsample = nn.Sequential(*[_upsample_stage(config) for _ in range(3)])
        self.generator = nn.Sequential(
            _block(config, 2 * c, c),
            _block(config, c, c),
            _block(config, c, c),
            _block(config, c, c),
        )
        if config.is_2d:
            self.to_residual = nn.Conv2d(c, in_ch, 1)
        else:
            self.to_residual = nn.Conv3d(c, in_ch, 1)
        self.strength_factor = config.strength_factor

    def expand_message(self, bits):
        """(B, m) bits -> message latent matching the cover latent extent."""
        if bits.dim() != 2 or bits.shape[1] != self.config.message_length:
            raise ValueError(
                f"expected (B, {self.config.message_length}) message bits, got {tuple(bits.shape)}"
            )
        gh, gw = self.config.grid_size
        c = self.config.channels
        grid = self.message_project(bits).view(-1, c, gh, gw)
        if not self.config.is_2d:
            grid = grid.unsqueeze(2).expand(-1, -1, self.config.frames, -1, -1).contiguous()
        return self.message_upsample(grid)

    def _check_input(self, x):
        cfg = self.config
        if cfg.is_2d:
            expected = (3 * cfg.frames, cfg.height, cfg.width)
        else:
            expected = (3, cfg.frames, cfg.height, cfg.width)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"encoder configured for input {expected}, got {tuple(x.shape[1:])}")

    def residual(self, x, bits):
        """Unit-strength watermark residual for network-form input x."""
        self._check_input(x)
        cover = self.cover_processor(x)
        message = self.expand_message(bits)
        features = torch.cat([cover, message], dim=1)
        return self.to_residual(self.generator(features))

    def forward(self, x, bits):
        return (x + self.strength_factor * self.residual(x, bits)).clamp(0.0, 1.0)

    def watermark_clip_batch(self, clips, bits):
        """(B, L, 3, H, W) cover -> watermarked, same layout."""
        if self.config.is_2d:
            out = self.forward(fold_clip_tensor(clips), bits)
            return unfold_clip_tensor(out)
        out = self.forward(clips.permute(0, 2, 1, 3, 4), bits)
        return out.permute(0, 2, 1, 3, 4)


class Decoder(nn.Module):
    """Recovers message logits from a possibly attacked clip."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.channels
        in_ch = 3 * config.frames if config.is_2d else 3
        self.features = nn.Sequential(
            _block(config, in_ch, c, stride=2),
            _block(config, c, c, stride=2),
            _block(config, c, c, stride=2),
        )
        self.head = nn.Linear(c, config.message_length)

    def forward(self, x):
        cfg = self.config
        if cfg.is_2d:
            expected = (3 * cfg.frames, cfg.height, cfg.width)
        else:
            expected = (3, cfg.frames, cfg.height, cfg.width)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"decoder configured for input {expected}, got {tuple(x.shape[1:])}")
        feat = self.features(x)
        pooled = feat.mean(dim=tuple(range(2, feat.dim())))
        return self.head(pooled)

    def decode_clip_batch(self, clips):
        if self.config.is_2d:
            return self.forward(fold_clip_tensor(clips))
        return self.forward(clips.permute(0, 2, 1, 3, 4))


def build_models(config: ModelConfig):
    """Seeded encoder/decoder pair; distinct init streams per side.

    The residual projection starts at zero so the watermark grows from an
    exact identity embedding; a full-strength random residual would clamp
    most pixels and stall early training.
    """
    encoder = init_module_weights(Encoder(config), config.init_seed)
    decoder = init_module_weights(Decoder(config), config.init_seed + 1)
    with torch.no_grad():
        encoder.to_residual.weight.zero_()
        if encoder.to_residual.bias is not None:
            encoder.to_residual.bias.zero_()
    return encoder, decoder


def _clip_to_batch(clip: VideoClip, config: ModelConfig):
    cfg = config
    if (clip.n_frames, clip.height, clip.width) != (cfg.frames, cfg.height, cfg.width):
        raise ValueError(
            f"model configured for {cfg.frames}x{cfg.height}x{cfg.width} clips, "
            f"got {clip.n_frames}x{clip.height}x{clip.width}"
        )
    return clip.pixels.unsqueeze(0)


def encode(cover: VideoClip, message: Message, encoder: Encoder) -> VideoClip:
    """Embed a message into one clip (inference mode)."""
    if len(message) != encoder.config.message_length:
        raise ValueError(f"model embeds {encoder.config.message_length}-bit messages, got {len(message)}")
    batch = _clip_to_batch(cover, encoder.config)
    bits = message.to_tensor(batch.dtype).unsqueeze(0)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            out = encoder.watermark_clip_batch(batch, bits)
    finally:
        encoder.train(was_training)
    return VideoClip(out.squeeze(0), frame_rate=cover.frame_rate)


def decode(attacked: VideoClip, decoder: Decoder):
    """Message logits for one clip (inference mode)."""
    batch = _clip_to_batch(attacked, decoder.config)
    was_training = decoder.training
    decoder.eval()
    try:
        with torch.no_grad():
            logits = decoder.decode_clip_batch(batch)
    finally:
        decoder.train(was_training)
    return logits.squeeze(0)
