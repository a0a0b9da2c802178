"""Hourglass attention module producing a one-channel sigmoid map at twice the
input resolution.

Layer stacks (c = input channels):

    ANAR-3  1x1 c->c/8 | deconv c/8->c/32                                | 1x1 ->1
    ANAR-5  1x1 c->c/4 | 3x3/2 ->c/8 | deconv ->c/16, deconv ->c/32       | 1x1 ->1
    ANAR-7  1x1 c->c/4 | 3x3/2 ->c/8, 3x3/2 ->c/8
                       | deconv ->c/16, deconv ->c/16, deconv ->c/32      | 1x1 ->1

Every conv/deconv except the last is followed by MFBN and ReLU.  Skip convs
(1x1) join the down path to the up path at equal resolution; their output is
added after the up block's MFBN and before its ReLU.  With
``interpolation_upsample`` the ANAR-3 deconv block is replaced by
parameter-free nearest-neighbour x2 upsampling (the "ANAR-2" variant).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .mfbn import MFBN
from .nn import Conv2d, Deconv2d, Module
from .tensor import ShapeError, Tensor

VARIANTS = (3, 5, 7)


@dataclass(frozen=True)
class AnarConfig:
    variant: int = 3
    in_channels: int = 32
    interpolation_upsample: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"ANAR variant must be one of {VARIANTS}, got {self.variant}")
        if self.in_channels < 32 or self.in_channels % 32:
            raise ValueError(f"ANAR input channels must be a positive multiple of 32, got {self.in_channels}")
        if self.interpolation_upsample and self.variant != 3:
            raise ValueError("interpolation_upsample is only defined for ANAR-3")

    @property
    def num_down(self) -> int:
        return {3: 0, 5: 1, 7: 2}[self.variant]

    @property
    def num_up(self) -> int:
        return self.num_down + 1


class ConvBlock(Module):
    """conv or deconv -> MFBN; ReLU is applied by the caller after any skip add."""

    def __init__(self, layer: Module, channels: int, num_flows: int):
        self.layer = layer
        self.norm = MFBN(channels, num_flows)

    def forward(self, x: Tensor, flow: int) -> Tensor:
        return self.norm(self.layer(x), flow)


class AnarModule(Module):
    def __init__(self, config: AnarConfig, num_flows: int, rng: np.random.Generator):
        self.config = config
        c, v = config.in_channels, config.variant
        self.trans = ConvBlock(Conv2d(c, c // (8 if v == 3 else 4), 1, rng), c // (8 if v == 3 else 4), num_flows)
        self.down: list[ConvBlock] = []
        self.up: list[ConvBlock] = []
        self.skips: list[Conv2d] = []
        if v == 3:
            if not config.interpolation_upsample:
                self.up = [ConvBlock(Deconv2d(c // 8, c // 32, rng), c // 32, num_flows)]
            tail_in = c // 8 if config.interpolation_upsample else c // 32
        elif v == 5:
            self.down = [ConvBlock(Conv2d(c // 4, c // 8, 3, rng, stride=2), c // 8, num_flows)]
            self.up = [
                ConvBlock(Deconv2d(c // 8, c // 16, rng), c // 16, num_flows),
                ConvBlock(Deconv2d(c // 16, c // 32, rng), c // 32, num_flows),
            ]
            self.skips = [Conv2d(c // 4, c // 16, 1, rng)]
            tail_in = c // 32
        else:
            self.down = [
                ConvBlock(Conv2d(c // 4, c // 8, 3, rng, stride=2), c // 8, num_flows),
                ConvBlock(Conv2d(c // 8, c // 8, 3, rng, stride=2), c // 8, num_flows),
            ]
            self.up = [
                ConvBlock(Deconv2d(c // 8, c // 16, rng), c // 16, num_flows),
                ConvBlock(Deconv2d(c // 16, c // 16, rng), c // 16, num_flows),
                ConvBlock(Deconv2d(c // 16, c // 32, rng), c // 32, num_flows),
            ]
            # skips[0]: outermost (trans output), skips[1]: first down output
            self.skips = [Conv2d(c // 4, c // 16, 1, rng), Conv2d(c // 8, c // 16, 1, rng)]
            tail_in = c // 32
        self.head = Conv2d(tail_in, 1, 1, rng)
        # start from a flat 0.5 map so an untrained junction passes features through unchanged
        self.head.weight.data[...] = 0

    def channel_sequence(self) -> list[int]:
        blocks = [self.trans, *self.down, *self.up]
        return [b.norm.channels for b in blocks] + [1]

    def forward(self, x: Tensor, flow: int) -> Tensor:
        return anar_forward(self, x, flow)


def anar_forward(module: AnarModule, x: Tensor, flow: int) -> Tensor:
    cfg = module.config
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"ANAR-{cfg.variant} expects (N, {cfg.in_channels}, H, W), got {x.shape}")
    div = 2**cfg.num_down
    h, w = x.shape[2:]
    if h % div or w % div:
        raise ShapeError(f"ANAR-{cfg.variant} needs H, W divisible by {div}; got {h}x{w}")

    t = ops.relu(module.trans(x, flow))
    path = [t]
    for blk in module.down:
        path.append(ops.relu(blk(path[-1], flow)))
    u = path[-1]
    # up block i (except the last) receives the skip from the down path at its output resolution
    n_skip = len(module.skips)
    for i, blk in enumerate(module.up):
        u = blk(u, flow)
        j = n_skip - 1 - i
        if 0 <= j < n_skip:
            u = ops.add(u, module.skips[j](path[j]))
        u = ops.relu(u)
    if cfg.interpolation_upsample:
        u = ops.upsample_nearest_2x(u)
    return ops.sigmoid(module.head(u))


def _conv_params(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def anar_param_count(config: AnarConfig) -> int:
    """Closed-form weight + bias + MFBN-affine count of an AnarModule."""
    c = config.in_channels
    bn = lambda ch: 2 * ch  # noqa: E731
    if config.variant == 3:
        total = _conv_params(c, c // 8, 1) + bn(c // 8)
        if config.interpolation_upsample:
            return total + _conv_params(c // 8, 1, 1)
        return total + _conv_params(c // 8, c // 32, 4) + bn(c // 32) + _conv_params(c // 32, 1, 1)
    if config.variant == 5:
        return (
            _conv_params(c, c // 4, 1) + bn(c // 4)
            + _conv_params(c // 4, c // 8, 3) + bn(c // 8)
            + _conv_params(c // 8, c // 16, 4) + bn(c // 16)
            + _conv_params(c // 16, c // 32, 4) + bn(c // 32)
            + _conv_params(c // 4, c // 16, 1)
            + _conv_params(c // 32, 1, 1)
        )
    return (
        _conv_params(c, c // 4, 1) + bn(c // 4)
        + _conv_params(c // 4, c // 8, 3) + bn(c // 8)
        + _conv_params(c // 8, c // 8, 3) + bn(c // 8)
        + _conv_params(c // 8, c // 16, 4) + bn(c // 16)
        + _conv_params(c // 16, c // 16, 4) + bn(c // 16)
        + _conv_params(c // 16, c // 32, 4) + bn(c // 32)
        + _conv_params(c // 4, c // 16, 1) + _conv_params(c // 8, c // 16, 1)
        + _conv_params(c // 32, 1, 1)
    )


def anar_build(config: AnarConfig, num_flows: int, rng: np.random.Generator) -> AnarModule:
    return AnarModule(config, num_flows, rng)
