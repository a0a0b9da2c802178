import numpy as np
import pytest

from tdaf import ops
from tdaf.anar import AnarConfig
from tdaf.backbones import BackboneSpec, StageSpec, make_stages
from tdaf.r2dns import (
    FlowPlan,
    build_classifier,
    build_input_pyramid,
    flow_stage_count,
    junction_alignment_check,
    required_divisor,
)
from tdaf.tensor import ShapeError, Tape, Tensor

from oracles import manual_forward, sharing_discrepancy


def test_stage_counts():
    plan = FlowPlan(3, 4)
    assert flow_stage_count(plan, 1) == 2
    assert flow_stage_count(plan, 3) == 4
    for L in (1, 3, 5):
        assert FlowPlan(1, L).stage_counts == [L]
    with pytest.raises(ValueError):
        FlowPlan(5, 4)


def test_junction_inventory():
    assert FlowPlan(3, 4).junctions() == [(2, 1), (2, 2), (3, 1), (3, 2), (3, 3)]
    assert FlowPlan(2, 2).junctions() == [(2, 1)]
    assert FlowPlan(1, 4).junctions() == []


def test_pyramid():
    x = Tensor(np.random.default_rng(0).standard_normal((1, 3, 32, 32)))
    assert [p.shape[2] for p in build_input_pyramid(x, 3)] == [8, 16, 32]
    (only,) = build_input_pyramid(x, 1)
    assert only is x
    levels = build_input_pyramid(Tensor(np.full((1, 3, 32, 32), 0.7)), 3)
    for p in levels:
        np.testing.assert_allclose(p.data, 0.7)


@pytest.mark.parametrize("name", ["tiny_vgg", "tiny_resnet"])
@pytest.mark.parametrize("L,N", [(L, N) for L in (1, 2, 3, 4) for N in range(1, L + 1)])
def test_every_plan_aligns(name, L, N):
    specs = make_stages(BackboneSpec(name, L, (32, 64, 128, 256)[:L]), 32)
    rep = junction_alignment_check(specs, FlowPlan(N, L), 32)
    assert rep.aligned
    assert len(rep.junctions) == len(FlowPlan(N, L).junctions())
    assert 32 % required_divisor(specs, FlowPlan(N, L)) == 0


def test_stride_three_rejected():
    specs = [StageSpec(1, "resnet", 3, 32, 3, 3), StageSpec(2, "resnet", 32, 32, 2, 6)]
    with pytest.raises(ShapeError):
        junction_alignment_check(specs, FlowPlan(2, 2), 36)


def test_flow3_final_feature_and_attention_inputs():
    model = build_classifier(BackboneSpec(num_classes=4), 3, AnarConfig(3), seed=0)
    trace = []
    feat, maps = model.body(Tensor(np.zeros((2, 3, 32, 32), np.float32)), trace)
    assert feat.shape == (2, 256, 2, 2)
    assert [a.config.in_channels for a in model.body.attentions] == [32, 64, 128]
    assert sorted(maps) == [(2, 1), (2, 2), (3, 1), (3, 2), (3, 3)]
    assert maps[(2, 1)].shape[2] * 2 == maps[(3, 1)].shape[2]


def test_half_maps_reduce_to_last_flow_backbone(rng):
    model = build_classifier(BackboneSpec(num_classes=4), 3, AnarConfig(3), seed=0).astype(np.float64)
    x = Tensor(rng.standard_normal((2, 3, 32, 32)))
    feat, maps = model.body(x)
    for m in maps.values():
        np.testing.assert_array_equal(m.data, 0.5)
    plain = x
    for stage in model.body.stages:
        plain = stage(plain, 2)
    np.testing.assert_allclose(feat.data, plain.data, rtol=1e-12, atol=1e-12)


def test_matches_manual_schedule(rng):
    model = build_classifier(BackboneSpec(num_classes=4), 3, AnarConfig(3), seed=0).astype(np.float64)
    for att in model.body.attentions:
        att.head.weight.data[...] = rng.standard_normal(att.head.weight.shape)
    x = Tensor(rng.standard_normal((2, 3, 32, 32)))
    feat, _ = model.body(x)
    body = model.body
    ref = manual_forward(body, x, [body.stages] * 3, [None] + [body.attentions] * 2)
    np.testing.assert_array_equal(feat.data, ref.data)


def test_weight_sharing_oracle(rng):
    """Shared grads equal the sum of grads of independent per-flow clones."""
    spec = BackboneSpec("tiny_resnet", 2, (32, 32), num_classes=4)
    model = build_classifier(spec, 2, AnarConfig(3), seed=3, input_size=8).astype(np.float64)
    for att in model.body.attentions:
        att.head.weight.data[...] = rng.standard_normal(att.head.weight.shape)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    worst, checked = sharing_discrepancy(model.body, x, rng.standard_normal((2, 32, 2, 2)))
    assert checked == len(model.body.named_parameters())
    assert worst < 1e-10


def test_single_flow_is_backbone(rng):
    spec = BackboneSpec(num_classes=4)
    tdaf = build_classifier(spec, 1, AnarConfig(3), seed=5)
    base = build_classifier(spec, mode="baseline", seed=5)
    x = Tensor(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
    np.testing.assert_array_equal(tdaf(x)[0].data, base(x)[0].data)


class TestConcatAblation:
    def test_equal_channels_triple_width(self):
        spec = BackboneSpec(stage_channels=(128, 128, 128, 128), num_classes=4)
        model = build_classifier(spec, 3, mode="multiscale_concat")
        assert model.head.channels == 384
        assert model.body.attentions == []

    def test_asymmetric_width_and_eta_independence(self, rng):
        spec = BackboneSpec(num_classes=4)
        a = build_classifier(spec, 3, mode="multiscale_concat", eta=0.5, seed=1)
        b = build_classifier(spec, 3, mode="multiscale_concat", eta=0.9, seed=1)
        assert a.head.channels == 64 + 128 + 256
        x = Tensor(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
        np.testing.assert_array_equal(a(x)[0].data, b(x)[0].data)

    def test_single_flow_matches_backbone(self, rng):
        spec = BackboneSpec(num_classes=4)
        cat = build_classifier(spec, 1, mode="multiscale_concat", seed=2)
        base = build_classifier(spec, mode="baseline", seed=2)
        x = Tensor(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
        np.testing.assert_allclose(cat(x)[0].data, base(x)[0].data, rtol=1e-6, atol=1e-6)


def test_bad_input_size_rejected():
    model = build_classifier(BackboneSpec(num_classes=4), 3, AnarConfig(3))
    with pytest.raises(ShapeError):
        model(Tensor(np.zeros((2, 3, 24, 24), np.float32)))
    with pytest.raises(ValueError):
        build_classifier(BackboneSpec(num_classes=4), 3, mode="bogus")
