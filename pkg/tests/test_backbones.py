import math

import numpy as np
import pytest

from tdaf import ops
from tdaf.backbones import Backbone, BackboneSpec, Head, ResNetStage, make_stages, make_tiny_resnet, make_tiny_vgg, stage_param_count
from tdaf.nn import make_rng
from tdaf.tensor import ShapeError, Tensor


@pytest.mark.parametrize("name", ["tiny_vgg", "tiny_resnet"])
def test_stage_geometry_and_param_formula(name):
    specs = make_stages(BackboneSpec(name), 32)
    assert [s.cumulative_stride for s in specs] == [2, 4, 8, 16]
    assert [s.out_channels for s in specs] == [32, 64, 128, 256]
    bb = Backbone(specs, make_rng(0))
    for stage, s in zip(bb.stages, specs):
        assert stage.num_parameters() == stage_param_count(s)
    out, maps = bb(Tensor(np.zeros((2, 3, 32, 32), np.float32)))
    assert out.shape == (2, 256, 2, 2) and maps == {}


def test_infeasible_input_rejected():
    with pytest.raises(ValueError):
        make_tiny_resnet(BackboneSpec(), 24)
    with pytest.raises(ValueError):
        make_tiny_vgg(BackboneSpec(num_stages=5, stage_channels=(32,) * 5), 16)


def test_residual_zero_branch_is_projection(rng):
    s = make_stages(BackboneSpec(num_stages=1, stage_channels=(32,)))[0]
    st = ResNetStage(s, 1, make_rng(0)).astype(np.float64)
    st.conv1.weight.data[...] = 0
    st.conv1.bias.data[...] = 0
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    np.testing.assert_allclose(st(x, 0).data, ops.relu(st.proj(x)).data, atol=1e-12)


def test_head():
    h = Head(256, 10, make_rng(0))
    assert h(Tensor(np.zeros((5, 256, 2, 2), np.float32))).shape == (5, 10, 1, 1)
    h.fc.weight.data[...] = 0
    h.fc.bias.data[...] = 0
    loss = ops.softmax_cross_entropy(h(Tensor(np.ones((5, 256, 2, 2), np.float32))), np.arange(5))
    assert loss.item() == pytest.approx(math.log(10), rel=1e-6)
    with pytest.raises(ShapeError):
        h(Tensor(np.zeros((1, 128, 2, 2), np.float32)))


def test_spec_validation():
    with pytest.raises(ValueError):
        BackboneSpec("resnet50")
    with pytest.raises(ValueError):
        BackboneSpec(stage_channels=(32, 48, 64, 128))
