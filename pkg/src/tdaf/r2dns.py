"""Recursive dual-directional nested structure.

Flow n (1-based, of N) sees the input downsampled N-n times and runs the
shared stages h_1..h_S(n) with S(n) = L - (N - n).  For n > 1 the output of
stage l is gated by the attention map g_l computed from flow n-1's output of
the same stage:

    x[n][l+1] = h_l(x[n][l]) * (g_l(x[n-1][l+1]) + eta)

A junction exists only where flow n-1 actually ran stage l (l <= S(n-1));
everywhere else the multiplier is exactly 1.  Only the last flow's final
feature leaves the model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .anar import AnarConfig, AnarModule
from .backbones import Backbone, BackboneSpec, Head, StageSpec, build_stage, make_stages
from .nn import Module, spawn_rngs
from .tensor import ShapeError, Tensor

MODES = ("attention", "multiscale_concat", "baseline")


@dataclass(frozen=True)
class FlowPlan:
    num_flows: int
    num_stages: int

    def __post_init__(self):
        if not 1 <= self.num_flows <= self.num_stages:
            raise ValueError(f"need 1 <= flows <= stages, got N={self.num_flows}, L={self.num_stages}")

    @property
    def stage_counts(self) -> list[int]:
        return [flow_stage_count(self, n) for n in range(1, self.num_flows + 1)]

    def junctions(self) -> list[tuple[int, int]]:
        """(flow, stage) pairs, 1-based, where an attention map gates a stage output."""
        return [
            (n, l)
            for n in range(2, self.num_flows + 1)
            for l in range(1, flow_stage_count(self, n - 1) + 1)
        ]


def flow_stage_count(plan: FlowPlan, n: int) -> int:
    if not 1 <= n <= plan.num_flows:
        raise IndexError(f"flow {n} out of range 1..{plan.num_flows}")
    return plan.num_stages - (plan.num_flows - n)


def build_input_pyramid(x: Tensor, num_flows: int) -> list[Tensor]:
    """[coarsest, ..., x]: element n is x average-pooled N-n times."""
    levels = [x]
    for _ in range(num_flows - 1):
        levels.append(ops.avg_pool_2x2(levels[-1]))
    return levels[::-1]


def required_divisor(stage_specs: list[StageSpec], plan: FlowPlan, anar_down: int = 0) -> int:
    """Smallest side length multiple that every flow, stage and junction can digest."""
    div = 1
    for n in range(1, plan.num_flows + 1):
        s = flow_stage_count(plan, n)
        div = max(div, 2 ** (plan.num_flows - n) * stage_specs[s - 1].cumulative_stride)
        if n < plan.num_flows and anar_down:
            # g_l reads flow n's stage-l output
            for l in range(1, s + 1):
                div = max(div, 2 ** (plan.num_flows - n) * stage_specs[l - 1].cumulative_stride * 2**anar_down)
    return div


class R2dnsModel(Module):
    def __init__(
        self,
        stage_specs: list[StageSpec],
        num_flows: int,
        anar: AnarConfig | None = None,
        eta: float = 0.5,
        mode: str = "attention",
        rngs: list[np.random.Generator] | None = None,
        seed: int = 0,
    ):
        if mode not in ("attention", "multiscale_concat"):
            raise ValueError(f"R2dnsModel mode must be attention or multiscale_concat, got {mode!r}")
        rng_stage, rng_anar = rngs or spawn_rngs(seed, 2)
        self.plan = FlowPlan(num_flows, len(stage_specs))
        self.eta = float(eta)
        self.mode = mode
        self.stage_specs = list(stage_specs)
        self.stages = [build_stage(s, num_flows, rng_stage) for s in stage_specs]
        self.attentions: list[AnarModule] = []
        if mode == "attention":
            anar = anar or AnarConfig()
            for s in stage_specs[:-1]:
                cfg = AnarConfig(anar.variant, s.out_channels, anar.interpolation_upsample)
                self.attentions.append(AnarModule(cfg, num_flows, rng_anar))
        self.anar_down = self.attentions[0].config.num_down if self.attentions else 0

    @property
    def out_channels(self) -> int:
        if self.mode == "multiscale_concat":
            return sum(self.stage_specs[s - 1].out_channels for s in self.plan.stage_counts)
        return self.stage_specs[-1].out_channels

    def forward(self, x: Tensor, trace: list | None = None):
        if self.mode == "multiscale_concat":
            return ablation_forward(self, x), {}
        return r2dns_forward(self, x, trace)


def _check_pyramid(model: R2dnsModel, x: Tensor) -> None:
    div = required_divisor(model.stage_specs, model.plan, model.anar_down)
    h, w = x.shape[2:]
    if h % div or w % div:
        raise ShapeError(f"input {h}x{w} must be divisible by {div} for {model.plan.num_flows} flows over {model.plan.num_stages} stages")


def r2dns_forward(model: R2dnsModel, x: Tensor, trace: list | None = None) -> tuple[Tensor, dict]:
    """Run every flow; returns (last flow's final feature, {(flow, stage): attention map}).

    If ``trace`` is a list, one ``(flow, stage, stage_output, map, junction_output)``
    tuple is appended per junction.
    """
    if model.mode != "attention":
        raise ValueError("r2dns_forward requires attention mode")
    _check_pyramid(model, x)
    plan = model.plan
    pyramid = build_input_pyramid(x, plan.num_flows)
    maps: dict[tuple[int, int], Tensor] = {}
    prev: list[Tensor] = []  # prev[l-1] = x_{l+1} of flow n-1
    feat = x
    for n in range(1, plan.num_flows + 1):
        feat = pyramid[n - 1]
        outs = []
        prev_count = len(prev)
        for l in range(1, flow_stage_count(plan, n) + 1):
            a = model.stages[l - 1](feat, n - 1)
            if n > 1 and l <= prev_count:
                m = model.attentions[l - 1](prev[l - 1], n - 2)
                if m.shape[2:] != a.shape[2:]:
                    raise ShapeError(f"junction (flow {n}, stage {l}) misaligned: features {a.shape}, attention {m.shape}")
                feat = ops.eltwise_mul_add(a, m, model.eta)
                maps[(n, l)] = m
                if trace is not None:
                    trace.append((n, l, a, m, feat))
            else:
                feat = a
            outs.append(feat)
        prev = outs
    return feat, maps


def ablation_forward(model: R2dnsModel, x: Tensor) -> Tensor:
    """Independent flows with no junctions; pooled final features concatenated."""
    if model.mode != "multiscale_concat":
        raise ValueError("ablation_forward requires multiscale_concat mode")
    _check_pyramid(model, x)
    pooled = []
    for n, feat in enumerate(build_input_pyramid(x, model.plan.num_flows), start=1):
        for l in range(1, flow_stage_count(model.plan, n) + 1):
            feat = model.stages[l - 1](feat, n - 1)
        pooled.append(ops.global_avg_pool(feat))
    return ops.concat_channels(pooled)


@dataclass
class JunctionReport:
    input_size: int
    flow_sizes: list[list[int]]  # flow_sizes[n-1][l-1]: side length after stage l in flow n
    junctions: list[tuple[int, int, int, int]]  # (flow, stage, attention input side, target side)

    @property
    def aligned(self) -> bool:
        return all(2 * src == dst for _, _, src, dst in self.junctions)


def junction_alignment_check(stage_specs: list[StageSpec], plan: FlowPlan, input_size: int, anar_down: int = 0) -> JunctionReport:
    """Propagate side lengths symbolically and verify every junction closes under the x2 attention map."""
    for s in stage_specs:
        if s.stride < 1 or s.stride & (s.stride - 1):
            raise ShapeError(f"stage {s.index} stride {s.stride} is not a power of two; flows cannot align")
    sizes = []
    for n in range(1, plan.num_flows + 1):
        side = input_size
        for _ in range(plan.num_flows - n):
            if side % 2:
                raise ShapeError(f"pyramid level for flow {n} has odd side {side}")
            side //= 2
        row = []
        for l in range(1, flow_stage_count(plan, n) + 1):
            st = stage_specs[l - 1].stride
            if side % st or side < st:
                raise ShapeError(f"flow {n} stage {l}: side {side} not divisible by stride {st}")
            side //= st
            row.append(side)
        sizes.append(row)
    junctions = []
    for n, l in plan.junctions():
        src, dst = sizes[n - 2][l - 1], sizes[n - 1][l - 1]
        if src % 2**anar_down:
            raise ShapeError(f"junction (flow {n}, stage {l}): attention input side {src} not divisible by {2**anar_down}")
        if 2 * src != dst:
            raise ShapeError(f"junction (flow {n}, stage {l}) misaligned: 2 x {src} != {dst}")
        junctions.append((n, l, src, dst))
    return JunctionReport(input_size, sizes, junctions)


class Classifier(Module):
    """A body (R2DNS or bare backbone) followed by global pooling and a linear head."""

    def __init__(self, body: Module, head: Head, mode: str):
        self.body = body
        self.head = head
        self.mode = mode

    def forward(self, x: Tensor) -> tuple[Tensor, dict]:
        feats, maps = self.body(x)
        return self.head(feats), maps


def build_classifier(
    backbone: BackboneSpec,
    flows: int = 3,
    anar: AnarConfig | None = None,
    eta: float = 0.5,
    mode: str = "attention",
    seed: int = 0,
    input_size: int = 32,
) -> Classifier:
    """Build a full model.  Stages, attention modules and head draw from three
    independent seed-derived streams, so the stage and head weights of an N=1
    model match those of the bare backbone bit for bit."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    specs = make_stages(backbone, input_size)
    rng_stage, rng_anar, rng_head = spawn_rngs(seed, 3)
    if mode == "baseline":
        body = Backbone(specs, rng_stage)
    else:
        body = R2dnsModel(specs, flows, anar, eta, mode, rngs=[rng_stage, rng_anar])
        junction_alignment_check(specs, body.plan, input_size, body.anar_down)
    return Classifier(body, Head(body.out_channels, backbone.num_classes, rng_head), mode)
