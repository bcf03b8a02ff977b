"""Attack simulation layer: nine distortions plus the forward wrapper for
the non-differentiable codec path.

Every distortion maps an (L, 3, H, W) clip tensor to one of identical shape
with values clamped to [0, 1], so a single network topology survives any
attack. The codec roundtrip is the only non-differentiable member; training
routes it through forward_asl, which substitutes the attacked values while
letting gradients pass straight through to the watermarked video.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import codec
from .video import VideoClip

DISTORTION_KINDS = (
    "identity",
    "h264",
    "frame_average",
    "frame_drop",
    "frame_swap",
    "gaussian_blur",
    "gaussian_noise",
    "random_crop",
    "random_hue",
)

_PARAM_RANGES = {
    "crf": (0, 51),
    "n": (1, None),
    "p": (0.0, 1.0),
    "sigma": (0.0, None),
    "std": (0.0, None),
}

_REQUIRED_PARAMS = {
    "identity": (),
    "h264": ("crf",),
    "frame_average": ("n",),
    "frame_drop": ("p",),
    "frame_swap": ("p",),
    "gaussian_blur": ("sigma",),
    "gaussian_noise": ("std",),
    "random_crop": ("p",),
    "random_hue": ("p",),
}


@dataclass
class DistortionSpec:
    """One attack: kind plus its parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        required = _REQUIRED_PARAMS[self.kind]
        missing = [k for k in required if k not in self.params]
        extra = [k for k in self.params if k not in required]
        if missing or extra:
            raise ValueError(f"{self.kind} takes params {required}, got {sorted(self.params)}")
        if self.kind == "h264" and not 0 <= self.params["crf"] <= 51:
            raise ValueError(f"crf must be in [0, 51], got {self.params['crf']}")
        if self.kind == "frame_average":
            n = self.params["n"]
            if n < 1 or n % 2 == 0:
                raise ValueError(f"frame_average window must be odd and >= 1, got {n}")
        if "p" in self.params and not 0.0 <= self.params["p"] <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.params['p']}")
        if "sigma" in self.params and self.params["sigma"] <= 0:
            raise ValueError(f"sigma must be > 0, got {self.params['sigma']}")
        if "std" in self.params and self.params["std"] < 0:
            raise ValueError(f"std must be >= 0, got {self.params['std']}")

    @property
    def differentiable(self):
        return self.kind != "h264"

    def describe(self):
        if not self.params:
            return self.kind
        inner = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({inner})"

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], params=dict(d.get("params", {})))


def parse_distortion_spec(text) -> DistortionSpec:
    """Parse CLI syntax like 'h264:crf=22' or 'gaussian_noise:std=0.04'."""
    kind, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"malformed distortion parameter {item!r} in {text!r}")
            params[key.strip()] = int(value) if key.strip() in ("crf", "n") else float(value)
    return DistortionSpec(kind.strip(), params)


@dataclass
class AttackOutcome:
    attacked: VideoClip
    pseudo: VideoClip
    spec_used: DistortionSpec
    rng_seed: int


def _generator(seed):
    g = torch.Generator()
    g.manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    return g


def _frame_average(x, n):
    half = n // 2
    frames = x.shape[0]
    out = []
    for i in range(frames):
        lo, hi = max(0, i - half), min(frames, i + half + 1)
        out.append(x[lo:hi].mean(dim=0))
    return torch.stack(out, dim=0)


def _frame_drop(x, p, gen):
    frames = x.shape[0]
    dropped = (torch.rand(frames, generator=gen) < p).tolist()
    if all(dropped):
        keep = int(torch.randint(frames, (1,), generator=gen))
        dropped[keep] = False
    survivors = [i for i, d in enumerate(dropped) if not d]
    source = []
    for i in range(frames):
        if not dropped[i]:
            source.append(i)
        else:
            earlier = [j for j in survivors if j < i]
            source.append(earlier[-1] if earlier else min(j for j in survivors if j > i))
    return x[source]


def _frame_swap(x, p, gen):
    frames = x.shape[0]
    order = list(range(frames))
    draws = torch.rand(frames // 2, generator=gen)
    for pair, i in enumerate(range(0, frames - 1, 2)):
        if draws[pair] < p:
            order[i], order[i + 1] = order[i + 1], order[i]
    return x[order]


def gaussian_kernel_1d(sigma, dtype=torch.float64):
    """Normalized Gaussian taps over a 3-sigma support (size 2*ceil(3*sigma)+1)."""
    radius = int(math.ceil(3.0 * sigma))
    t = torch.arange(-radius, radius + 1, dtype=dtype)
    kernel = torch.exp(-(t ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def _gaussian_blur(x, sigma):
    # computed in float64 so a constant clip is preserved bit-exactly after
    # rounding back to the input dtype
    kernel = gaussian_kernel_1d(sigma)
    size = kernel.numel()
    pad = size // 2
    if pad >= x.shape[-1] or pad >= x.shape[-2]:
        raise ValueError(f"blur kernel of size {size} too large for {x.shape[-2]}x{x.shape[-1]} frames")
    weight = torch.outer(kernel, kernel).view(1, 1, size, size)
    frames, channels, height, width = x.shape
    flat = x.reshape(frames * channels, 1, height, width).to(torch.float64)
    flat = F.pad(flat, (pad, pad, pad, pad), mode="reflect")
    blurred = F.conv2d(flat, weight)
    return blurred.reshape(x.shape).to(x.dtype)


def _gaussian_noise(x, std, gen):
    noise = torch.randn(x.shape, generator=gen, dtype=x.dtype)
    return x + std * noise


def _random_crop(x, p, gen):
    height, width = x.shape[-2], x.shape[-1]
    keep_h = min(height, max(1, round(height * math.sqrt(p))))
    keep_w = min(width, max(1, round(width * math.sqrt(p))))
    top = int(torch.randint(height - keep_h + 1, (1,), generator=gen))
    left = int(torch.randint(width - keep_w + 1, (1,), generator=gen))
    mask = torch.zeros(height, width, dtype=x.dtype)
    mask[top:top + keep_h, left:left + keep_w] = 1.0
    return x * mask


def rgb_to_hsv(x):
    """Channel-last-free RGB->HSV on (..., 3, H, W) tensors, hue in [0, 1)."""
    r, g, b = x.unbind(dim=-3)
    maxc = torch.max(x, dim=-3).values
    minc = torch.min(x, dim=-3).values
    eqc = maxc == minc
    cr = maxc - minc
    ones = torch.ones_like(maxc)
    s = cr / torch.where(eqc, ones, maxc.clamp(min=1e-12))
    cr_div = torch.where(eqc, ones, cr)
    rc = (maxc - r) / cr_div
    gc = (maxc - g) / cr_div
    bc = (maxc - b) / cr_div
    hr = (maxc == r).to(x.dtype) * (bc - gc)
    hg = ((maxc == g) & (maxc != r)).to(x.dtype) * (2.0 + rc - bc)
    hb = ((maxc != g) & (maxc != r)).to(x.dtype) * (4.0 + gc - rc)
    h = torch.fmod((hr + hg + hb) / 6.0 + 1.0, 1.0)
    return torch.stack((h, s, maxc), dim=-3)


def hsv_to_rgb(x):
    h, s, v = x.unbind(dim=-3)
    i = torch.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.to(torch.int32) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    mask = i.unsqueeze(-3) == torch.arange(6, device=x.device).view(-1, 1, 1)
    a1 = torch.stack((v, q, p, p, t, v), dim=-3)
    a2 = torch.stack((t, v, v, q, p, p), dim=-3)
    a3 = torch.stack((p, p, t, v, v, q), dim=-3)
    combined = torch.stack((a1, a2, a3), dim=-4)
    return (mask.to(x.dtype).unsqueeze(-4) * combined).sum(dim=-3)


# hue offsets cover this fraction of the hue circle in each direction
HUE_OFFSET_RANGE = 0.1


def _random_hue(x, p, gen):
    if torch.rand(1, generator=gen).item() >= p:
        return x
    offset = (torch.rand(1, generator=gen).item() * 2.0 - 1.0) * HUE_OFFSET_RANGE
    hsv = rgb_to_hsv(x)
    h, s, v = hsv.unbind(dim=-3)
    h = torch.fmod(h + offset + 1.0, 1.0)
    return hsv_to_rgb(torch.stack((h, s, v), dim=-3))


def h264_roundtrip_tensor(x, crf, frame_rate=30):
    """Codec roundtrip at pixel level; inherently non-differentiable."""
    with torch.no_grad():
        frames = (x.detach().clamp(0, 1) * 255.0).round().to(torch.uint8)
        frames = frames.permute(0, 2, 3, 1).cpu().numpy()
        out = codec.h264_roundtrip_frames(frames, crf, frame_rate=frame_rate)
        back = torch.from_numpy(out).permute(0, 3, 1, 2).to(dtype=x.dtype) / 255.0
    return back


def h264_roundtrip(clip: VideoClip, crf) -> VideoClip:
    """Encode to H.264 at the given CRF, decode back; shape preserved."""
    frames = codec.h264_roundtrip_frames(clip.to_uint8(), crf, frame_rate=int(clip.frame_rate))
    return VideoClip.from_uint8(frames, frame_rate=clip.frame_rate)


def apply_distortion_tensor(x, spec: DistortionSpec, seed=0):
    """Apply one distortion to an (L, 3, H, W) tensor; output clamped to [0, 1]."""
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected an (L, 3, H, W) tensor, got shape {tuple(x.shape)}")
    kind, params = spec.kind, spec.params
    if kind == "identity":
        return x.clone()
    if kind == "h264":
        return h264_roundtrip_tensor(x, params["crf"])
    gen = _generator(seed)
    if kind == "frame_average":
        out = _frame_average(x, params["n"])
    elif kind == "frame_drop":
        out = _frame_drop(x, params["p"], gen)
    elif kind == "frame_swap":
        out = _frame_swap(x, params["p"], gen)
    elif kind == "gaussian_blur":
        out = _gaussian_blur(x, params["sigma"])
    elif kind == "gaussian_noise":
        out = _gaussian_noise(x, params["std"], gen)
    elif kind == "random_crop":
        out = _random_crop(x, params["p"], gen)
    elif kind == "random_hue":
        out = _random_hue(x, params["p"], gen)
    else:  # unreachable, kinds validated in DistortionSpec
        raise ValueError(kind)
    return out.clamp(0.0, 1.0)


def apply_distortion(clip: VideoClip, spec: DistortionSpec, seed=0) -> VideoClip:
    return VideoClip(apply_distortion_tensor(clip.pixels, spec, seed), frame_rate=clip.frame_rate)


def forward_asl_tensor(x, spec: DistortionSpec, seed=0):
    """Straight-through attack: returns (pseudo, attacked) tensors.

    pseudo carries exactly the attacked pixel values while its derivative
    with respect to x is the identity, so decoder gradients reach the
    encoder unchanged even for non-differentiable attacks.
    """
    with torch.no_grad():
        attacked = apply_distortion_tensor(x.detach(), spec, seed)
    # (x - x.detach()) is exactly zero elementwise, so pseudo carries
    # attacked's bits; grouping it the other way would round twice.
    pseudo = attacked + (x - x.detach())
    return pseudo, attacked


def forward_asl(watermarked: VideoClip, spec: DistortionSpec, seed=0) -> AttackOutcome:
    pseudo, attacked = forward_asl_tensor(watermarked.pixels, spec, seed)
    return AttackOutcome(
        attacked=VideoClip(attacked, frame_rate=watermarked.frame_rate),
        pseudo=VideoClip(pseudo, frame_rate=watermarked.frame_rate),
        spec_used=spec,
        rng_seed=seed,
    )


@dataclass
class DistortionTemplate:
    """A distortion kind plus per-parameter sampling ranges.

    Ranges are (low, high) tuples; low == high pins the value. crf and n are
    drawn as integers (crf uniform over {low..high} inclusive).
    """

    kind: str
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")

    def sample(self, rng) -> DistortionSpec:
        params = {}
        for name, (lo, hi) in self.ranges.items():
            if lo == hi:
                params[name] = lo
            elif name in ("crf", "n"):
                params[name] = int(rng.integers(int(lo), int(hi) + 1))
            else:
                params[name] = float(rng.uniform(lo, hi))
        return DistortionSpec(self.kind, params)

    def to_dict(self):
        return {"kind": self.kind, "ranges": {k: [lo, hi] for k, (lo, hi) in self.ranges.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], {k: (v[0], v[1]) for k, v in d.get("ranges", {}).items()})


def training_distortion_set():
    """Per-batch sampling templates: randomized attack strengths for training."""
    return [
        DistortionTemplate("identity"),
        DistortionTemplate("h264", {"crf": (18, 28)}),
        DistortionTemplate("frame_average", {"n": (3, 3)}),
        DistortionTemplate("frame_drop", {"p": (0.2, 0.6)}),
        DistortionTemplate("frame_swap", {"p": (0.2, 0.6)}),
        DistortionTemplate("gaussian_blur", {"sigma": (0.5, 2.0)}),
        DistortionTemplate("gaussian_noise", {"std": (0.01, 0.05)}),
        DistortionTemplate("random_crop", {"p": (0.3, 0.7)}),
        DistortionTemplate("random_hue", {"p": (1.0, 1.0)}),
    ]


def evaluation_distortion_set():
    """The fixed benchmark attack grid used for reporting."""
    return [
        DistortionSpec("identity"),
        DistortionSpec("h264", {"crf": 22}),
        DistortionSpec("frame_average", {"n": 3}),
        DistortionSpec("frame_drop", {"p": 0.5}),
        DistortionSpec("frame_swap", {"p": 0.5}),
        DistortionSpec("gaussian_blur", {"sigma": 2.0}),
        DistortionSpec("gaussian_noise", {"std": 0.04}),
        DistortionSpec("random_crop", {"p": 0.4}),
        DistortionSpec("random_hue", {"p": 1.0}),
    ]


def sample_distortion(templates, seed=None, rng=None) -> DistortionSpec:
    """Uniform choice over templates, parameters drawn from their ranges."""
    if not templates:
        raise ValueError("cannot sample from an empty distortion set")
    if rng is None:
        rng = np.random.default_rng(seed)
    template = templates[int(rng.integers(len(templates)))]
    return template.sample(rng)
