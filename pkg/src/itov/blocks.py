"""Convolutional block variants and their analytical parameter/FLOP counts.

Five kinds are supported. The 2D kinds consume channel-folded (3L, H, W)
pseudo-images; the 3D kinds consume clips with an explicit temporal axis.
Each built block is conv (possibly composite) -> channel normalization ->
ReLU; normalization is affine-free so the closed-form parameter counts match
the built module's trainable totals exactly.

FLOPs are counted as 2 x multiply-accumulates over every sub-convolution,
excluding bias additions and activations.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

KIND_REGULAR_2D = "regular2d"
KIND_REGULAR_3D = "regular3d"
KIND_TWO_PLUS_ONE_D = "two_plus_one_d"
KIND_DEPTHWISE_2D = "depthwise2d"
KIND_DEPTHWISE_3D = "depthwise3d"

BLOCK_KINDS = (
    KIND_REGULAR_2D,
    KIND_REGULAR_3D,
    KIND_TWO_PLUS_ONE_D,
    KIND_DEPTHWISE_2D,
    KIND_DEPTHWISE_3D,
)

KINDS_2D = (KIND_REGULAR_2D, KIND_DEPTHWISE_2D)
KINDS_3D = (KIND_REGULAR_3D, KIND_TWO_PLUS_ONE_D, KIND_DEPTHWISE_3D)


@dataclass
class ConvBlockSpec:
    kind: str
    in_channels: int
    out_channels: int
    spatial_kernel: int = 3
    temporal_kernel: int = 3
    stride: int = 1
    includes_bias: bool = True

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}, expected one of {BLOCK_KINDS}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        for name, k in (("spatial_kernel", self.spatial_kernel), ("temporal_kernel", self.temporal_kernel)):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be odd and >= 1, got {k}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def is_2d(self):
        return self.kind in KINDS_2D

    def to_dict(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "spatial_kernel": self.spatial_kernel,
            "temporal_kernel": self.temporal_kernel,
            "stride": self.stride,
            "includes_bias": self.includes_bias,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class CostReport:
    parameter_count: int
    flop_count: int
    output_shape: tuple


def mid_channels(spec: ConvBlockSpec):
    """Intermediate width of the factorized spatial+temporal block.

    Chosen so the factorized pair stays parameter-comparable to a full
    spatiotemporal kernel of the same dimensions.
    """
    kt, k = spec.temporal_kernel, spec.spatial_kernel
    cin, cout = spec.in_channels, spec.out_channels
    return max(1, (kt * k * k * cin * cout) // (k * k * cin + kt * cout))


def _init_conv(conv, generator):
    """Fan-in scaled normal init, drawn from the given generator."""
    weight = conv.weight
    fan_in = weight.shape[1] * math.prod(weight.shape[2:])
    if getattr(conv, "groups", 1) > 1:
        # grouped conv weight is (out, in/groups, ...); fan_in already reflects that
        pass
    with torch.no_grad():
        weight.normal_(0.0, 1.0 / math.sqrt(max(fan_in, 1)), generator=generator)
        if conv.bias is not None:
            conv.bias.zero_()


def init_module_weights(module, seed):
    """Re-initialize every conv/linear weight in `module` from one seeded stream."""
    generator = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.ConvTranspose2d, nn.ConvTranspose3d, nn.Linear)):
            _init_conv(m, generator)
    return module


class ConvBlock(nn.Module):
    """conv -> affine-free channel norm -> ReLU.

    2D kinds take (B, C, H, W); 3D kinds take (B, C, L, H, W). Spatial stride
    follows spec.stride; the temporal extent is always preserved.
    """

    def __init__(self, spec: ConvBlockSpec):
        super().__init__()
        self.spec = spec
        k, kt, s, bias = spec.spatial_kernel, spec.temporal_kernel, spec.stride, spec.includes_bias
        cin, cout = spec.in_channels, spec.out_channels
        pad, tpad = k // 2, kt // 2

        if spec.kind == KIND_REGULAR_2D:
            convs = [nn.Conv2d(cin, cout, k, stride=s, padding=pad, bias=bias)]
        elif spec.kind == KIND_REGULAR_3D:
            convs = [nn.Conv3d(cin, cout, (kt, k, k), stride=(1, s, s), padding=(tpad, pad, pad), bias=bias)]
        elif spec.kind == KIND_TWO_PLUS_ONE_D:
            mid = mid_channels(spec)
            convs = [
                nn.Conv3d(cin, mid, (1, k, k), stride=(1, s, s), padding=(0, pad, pad), bias=bias),
                nn.Conv3d(mid, cout, (kt, 1, 1), stride=1, padding=(tpad, 0, 0), bias=bias),
            ]
        elif spec.kind == KIND_DEPTHWISE_2D:
            convs = [
                nn.Conv2d(cin, cout, 1, bias=bias),
                nn.Conv2d(cout, cout, k, stride=s, padding=pad, groups=cout, bias=bias),
            ]
        else:  # depthwise3d
            convs = [
                nn.Conv3d(cin, cout, 1, bias=bias),
                nn.Conv3d(cout, cout, (kt, k, k), stride=(1, s, s), padding=(tpad, pad, pad), groups=cout, bias=bias),
            ]
        self.convs = nn.Sequential(*convs)
        # per-sample channel normalization, parameter-free: each clip is
        # normalized against its own statistics, so behaviour is identical
        # at train and eval time and independent of batch composition
        # (attacked inputs would otherwise shift pooled batch statistics)
        norm_cls = nn.InstanceNorm2d if spec.is_2d else nn.InstanceNorm3d
        self.norm = norm_cls(cout)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        expected_dim = 4 if self.spec.is_2d else 5
        if x.dim() != expected_dim:
            raise ValueError(
                f"{self.spec.kind} block expects a {expected_dim}D batched tensor, got shape {tuple(x.shape)}"
            )
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        return self.act(self.norm(self.convs(x)))


def build_block(spec: ConvBlockSpec, seed=None) -> ConvBlock:
    block = ConvBlock(spec)
    if seed is not None:
        init_module_weights(block, seed)
    return block


def trainable_parameter_total(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def count_params(spec: ConvBlockSpec) -> int:
    """Closed-form trainable parameter count; matches the built block exactly."""
    k2 = spec.spatial_kernel ** 2
    kt = spec.temporal_kernel
    cin, cout = spec.in_channels, spec.out_channels
    b = spec.includes_bias

    if spec.kind == KIND_REGULAR_2D:
        return cout * cin * k2 + (cout if b else 0)
    if spec.kind == KIND_REGULAR_3D:
        return cout * cin * kt * k2 + (cout if b else 0)
    if spec.kind == KIND_TWO_PLUS_ONE_D:
        mid = mid_channels(spec)
        return mid * cin * k2 + (mid if b else 0) + cout * mid * kt + (cout if b else 0)
    if spec.kind == KIND_DEPTHWISE_2D:
        return cout * cin + (cout if b else 0) + cout * k2 + (cout if b else 0)
    # depthwise3d
    return cout * cin + (cout if b else 0) + cout * kt * k2 + (cout if b else 0)


def _strided(extent, stride):
    # same padding: output extent for stride s
    return (extent + stride - 1) // stride


def count_flops(spec: ConvBlockSpec, input_shape) -> CostReport:
    """FLOPs (2 x MACs) and output shape for one block applied to input_shape.

    input_shape is (C, H, W) for 2D kinds and (L, C, H, W) for 3D kinds,
    matching the clip layout with frames first.
    """
    k2 = spec.spatial_kernel ** 2
    kt = spec.temporal_kernel
    cin, cout, s = spec.in_channels, spec.out_channels, spec.stride

    if spec.is_2d:
        if len(input_shape) != 3:
            raise ValueError(f"2D kinds take (C, H, W) input shapes, got {input_shape}")
        c, h, w = input_shape
        frames = None
    else:
        if len(input_shape) != 4:
            raise ValueError(f"3D kinds take (L, C, H, W) input shapes, got {input_shape}")
        frames, c, h, w = input_shape
    if c != cin:
        raise ValueError(f"input has {c} channels but spec.in_channels is {cin}")

    ho, wo = _strided(h, s), _strided(w, s)

    if spec.kind == KIND_REGULAR_2D:
        macs = ho * wo * cout * cin * k2
        out_shape = (cout, ho, wo)
    elif spec.kind == KIND_REGULAR_3D:
        macs = frames * ho * wo * cout * cin * kt * k2
        out_shape = (frames, cout, ho, wo)
    elif spec.kind == KIND_TWO_PLUS_ONE_D:
        mid = mid_channels(spec)
        macs = frames * ho * wo * mid * cin * k2 + frames * ho * wo * cout * mid * kt
        out_shape = (frames, cout, ho, wo)
    elif spec.kind == KIND_DEPTHWISE_2D:
        macs = h * w * cout * cin + ho * wo * cout * k2
        out_shape = (cout, ho, wo)
    else:  # depthwise3d
        macs = frames * h * w * cout * cin + frames * ho * wo * cout * kt * k2
        out_shape = (frames, cout, ho, wo)

    return CostReport(parameter_count=count_params(spec), flop_count=2 * macs, output_shape=out_shape)
