"""Desk-scale stage factories and the classification head.

A stage is the unit between two x2 spatial reductions; each stage of both
backbones ends with exactly one halving.  There is no stem, so stage 1 reads
the raw image.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .mfbn import MFBN
from .nn import Conv2d, Linear, Module
from .tensor import ShapeError, Tensor

BACKBONES = ("tiny_vgg", "tiny_resnet")
DEFAULT_CHANNELS = (32, 64, 128, 256)


@dataclass(frozen=True)
class BackboneSpec:
    name: str = "tiny_resnet"
    num_stages: int = 4
    stage_channels: tuple[int, ...] = DEFAULT_CHANNELS
    num_classes: int = 10
    in_channels: int = 3

    def __post_init__(self):
        if self.name not in BACKBONES:
            raise ValueError(f"unknown backbone {self.name!r}; expected one of {BACKBONES}")
        if self.num_stages < 1:
            raise ValueError("num_stages must be positive")
        if len(self.stage_channels) < self.num_stages:
            raise ValueError(f"{self.num_stages} stages need {self.num_stages} channel counts, got {self.stage_channels}")
        if any(c < 32 or c % 32 for c in self.channels):
            raise ValueError(f"stage channels must be multiples of 32, got {self.channels}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.stage_channels[: self.num_stages])


@dataclass(frozen=True)
class StageSpec:
    index: int  # 1-based
    kind: str
    in_channels: int
    out_channels: int
    stride: int
    cumulative_stride: int
    op_stack: tuple[str, ...] = field(default=())


def _stage_specs(spec: BackboneSpec, kind: str, ops_desc: tuple[str, ...]) -> list[StageSpec]:
    out, cin, cum = [], spec.in_channels, 1
    for i, cout in enumerate(spec.channels, start=1):
        cum *= 2
        out.append(StageSpec(i, kind, cin, cout, 2, cum, ops_desc))
        cin = cout
    return out


def make_tiny_vgg(spec: BackboneSpec, input_size: int | None = None) -> list[StageSpec]:
    stages = _stage_specs(spec, "vgg", ("conv3x3", "mfbn", "relu", "conv3x3", "mfbn", "relu", "maxpool2x2"))
    _check_feasible(stages, input_size)
    return stages


def make_tiny_resnet(spec: BackboneSpec, input_size: int | None = None) -> list[StageSpec]:
    stages = _stage_specs(
        spec, "resnet", ("conv3x3/2", "mfbn", "relu", "conv3x3", "mfbn", "+proj1x1/2", "relu")
    )
    _check_feasible(stages, input_size)
    return stages


def make_stages(spec: BackboneSpec, input_size: int | None = None) -> list[StageSpec]:
    factory = make_tiny_vgg if spec.name == "tiny_vgg" else make_tiny_resnet
    return factory(spec, input_size)


def _check_feasible(stages: list[StageSpec], input_size: int | None) -> None:
    if input_size is None:
        return
    if input_size % stages[-1].cumulative_stride:
        raise ValueError(
            f"{len(stages)} stages (cumulative stride {stages[-1].cumulative_stride}) do not fit a {input_size}x{input_size} input"
        )


class VggStage(Module):
    def __init__(self, s: StageSpec, num_flows: int, rng: np.random.Generator):
        self.spec = s
        self.conv0 = Conv2d(s.in_channels, s.out_channels, 3, rng)
        self.bn0 = MFBN(s.out_channels, num_flows)
        self.conv1 = Conv2d(s.out_channels, s.out_channels, 3, rng)
        self.bn1 = MFBN(s.out_channels, num_flows)

    def forward(self, x: Tensor, flow: int) -> Tensor:
        x = ops.relu(self.bn0(self.conv0(x), flow))
        x = ops.relu(self.bn1(self.conv1(x), flow))
        return ops.max_pool_2x2(x)


class ResNetStage(Module):
    def __init__(self, s: StageSpec, num_flows: int, rng: np.random.Generator):
        self.spec = s
        self.conv0 = Conv2d(s.in_channels, s.out_channels, 3, rng, stride=s.stride)
        self.bn0 = MFBN(s.out_channels, num_flows)
        self.conv1 = Conv2d(s.out_channels, s.out_channels, 3, rng)
        self.bn1 = MFBN(s.out_channels, num_flows)
        self.proj = Conv2d(s.in_channels, s.out_channels, 1, rng, stride=s.stride)

    def forward(self, x: Tensor, flow: int) -> Tensor:
        y = ops.relu(self.bn0(self.conv0(x), flow))
        y = self.bn1(self.conv1(y), flow)
        return ops.relu(ops.add(y, self.proj(x)))


def build_stage(s: StageSpec, num_flows: int, rng: np.random.Generator) -> Module:
    return (VggStage if s.kind == "vgg" else ResNetStage)(s, num_flows, rng)


def stage_param_count(s: StageSpec) -> int:
    """Closed-form parameter count of one built stage (weights, biases, MFBN affine)."""
    ci, co = s.in_channels, s.out_channels
    if s.kind == "vgg":
        return (ci * co * 9 + co) + 2 * co + (co * co * 9 + co) + 2 * co
    return (ci * co * 9 + co) + 2 * co + (co * co * 9 + co) + 2 * co + (ci * co + co)


class Backbone(Module):
    """The bare stage stack h_1..h_L run once on the full-resolution input."""

    def __init__(self, stage_specs: list[StageSpec], rng: np.random.Generator, num_flows: int = 1):
        self.stages = [build_stage(s, num_flows, rng) for s in stage_specs]

    @property
    def out_channels(self) -> int:
        return self.stages[-1].spec.out_channels

    def forward(self, x: Tensor) -> tuple[Tensor, dict]:
        for stage in self.stages:
            x = stage(x, 0)
        return x, {}


class Head(Module):
    def __init__(self, channels: int, num_classes: int, rng: np.random.Generator):
        self.channels = channels
        self.fc = Linear(channels, num_classes, rng)

    def forward(self, features: Tensor) -> Tensor:
        return head_forward(self, features)


def head_forward(head: Head, features: Tensor) -> Tensor:
    if features.shape[1] != head.channels:
        raise ShapeError(f"head expects {head.channels} feature channels, got {features.shape[1]}")
    return head.fc(ops.global_avg_pool(features))
