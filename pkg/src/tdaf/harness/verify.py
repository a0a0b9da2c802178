"""Finite-difference gradient suite over every op and a composed model."""
from __future__ import annotations

import numpy as np

from .. import ops
from ..anar import AnarConfig
from ..backbones import BackboneSpec
from ..gradcheck import GradCheckReport, grad_check
from ..mfbn import MFBN
from ..r2dns import build_classifier
from ..tensor import Tensor

OP_TOL = 1e-6
MODEL_TOL = 1e-5


def _t(rng, *shape, positive=False):
    a = rng.standard_normal(shape)
    return Tensor(np.abs(a) + 0.1 if positive else a, requires_grad=True)


def _probe(fn, rng, tensors: dict[str, Tensor], out_shape) -> GradCheckReport:
    w = rng.standard_normal(out_shape)
    return grad_check(lambda: ops.weighted_sum(fn(), w), tensors, OP_TOL, max_probes=None)


def op_checks(seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    rng = np.random.default_rng(seed)
    out = []

    x, w, b = _t(rng, 2, 3, 8, 8), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    out.append(("conv2d 3x3/2", _probe(lambda: ops.conv2d(x, w, b, 2, 1), rng, {"x": x, "w": w, "b": b}, (2, 4, 4, 4))))
    x, w, b = _t(rng, 2, 3, 6, 6), _t(rng, 5, 3, 3, 3), _t(rng, 5)
    out.append(("conv2d 3x3/1", _probe(lambda: ops.conv2d(x, w, b, 1, 1), rng, {"x": x, "w": w, "b": b}, (2, 5, 6, 6))))
    x, w, b = _t(rng, 2, 4, 6, 6), _t(rng, 3, 4, 1, 1), _t(rng, 3)
    out.append(("conv2d 1x1/2", _probe(lambda: ops.conv2d(x, w, b, 2, 0), rng, {"x": x, "w": w, "b": b}, (2, 3, 3, 3))))
    x, w, b = _t(rng, 2, 3, 3, 3), _t(rng, 3, 2, 4, 4), _t(rng, 2)
    out.append(("deconv2d 4x4/2", _probe(lambda: ops.deconv2d(x, w, b), rng, {"x": x, "w": w, "b": b}, (2, 2, 6, 6))))
    x = _t(rng, 2, 3, 4, 4)
    out.append(("sigmoid", _probe(lambda: ops.sigmoid(x), rng, {"x": x}, x.shape)))
    x = Tensor(np.sign(rng.standard_normal((2, 3, 4, 4))) * (0.1 + rng.random((2, 3, 4, 4))), requires_grad=True)
    out.append(("relu", _probe(lambda: ops.relu(x), rng, {"x": x}, x.shape)))
    a, m = _t(rng, 2, 4, 4, 4), Tensor(rng.random((2, 1, 4, 4)), requires_grad=True)
    out.append(("eltwise_mul_add", _probe(lambda: ops.eltwise_mul_add(a, m, 0.5), rng, {"a": a, "b": m}, a.shape)))
    x = _t(rng, 2, 3, 4, 6)
    out.append(("avg_pool_2x2", _probe(lambda: ops.avg_pool_2x2(x), rng, {"x": x}, (2, 3, 2, 3))))
    out.append(("max_pool_2x2", _probe(lambda: ops.max_pool_2x2(x), rng, {"x": x}, (2, 3, 2, 3))))
    out.append(("upsample_nearest_2x", _probe(lambda: ops.upsample_nearest_2x(x), rng, {"x": x}, (2, 3, 8, 12))))
    out.append(("global_avg_pool", _probe(lambda: ops.global_avg_pool(x), rng, {"x": x}, (2, 3, 1, 1))))
    y = _t(rng, 2, 3, 4, 6)
    out.append(("add", _probe(lambda: ops.add(x, y), rng, {"x": x, "y": y}, x.shape)))
    z = _t(rng, 2, 2, 4, 6)
    out.append(("concat_channels", _probe(lambda: ops.concat_channels([x, z]), rng, {"x": x, "z": z}, (2, 5, 4, 6))))
    f, w, b = _t(rng, 3, 5, 1, 1), _t(rng, 4, 5), _t(rng, 4)
    out.append(("linear", _probe(lambda: ops.linear(f, w, b), rng, {"x": f, "w": w, "b": b}, (3, 4, 1, 1))))
    logits = _t(rng, 5, 4, 1, 1)
    labels = rng.integers(0, 4, 5)
    out.append(("softmax_cross_entropy", grad_check(lambda: ops.softmax_cross_entropy(logits, labels), {"logits": logits}, OP_TOL, max_probes=None)))
    for mode in ("train", "eval"):
        bn = MFBN(3, num_flows=2).astype(np.float64)
        bn.gamma.data[:] = rng.standard_normal(3)
        bn.alpha.data[:] = rng.standard_normal(3)
        bn.running_mean[1] = rng.standard_normal(3)
        bn.running_var[1] = 0.5 + rng.random(3)
        bn.train(mode == "train")
        x = _t(rng, 4, 3, 3, 3)
        out.append(
            (f"mfbn ({mode})", _probe(lambda: bn(x, 1), rng, {"x": x, "gamma": bn.gamma, "alpha": bn.alpha}, x.shape))
        )
    return out


def anar_check(variant: int = 3, seed: int = 0, channels: int = 32) -> GradCheckReport:
    from ..anar import AnarModule
    from ..nn import make_rng

    rng = make_rng(seed)
    mod = AnarModule(AnarConfig(variant, channels), num_flows=2, rng=rng).astype(np.float64)
    mod.head.weight.data[...] = rng.standard_normal(mod.head.weight.shape) * 0.5
    x = Tensor(rng.standard_normal((2, channels, 4, 4)))
    w = rng.standard_normal((2, 1, 8, 8))
    tensors = {n: p for n, p in mod.named_parameters()}
    return grad_check(lambda: ops.weighted_sum(mod(x, 1), w), tensors, MODEL_TOL, max_probes=24, rng=rng)


def model_check(seed: int = 0, channels: int = 32) -> GradCheckReport:
    """Composed attention model, L=2 stages, N=2 flows, ANAR-3, double precision."""
    rng = np.random.default_rng(seed)
    model = build_classifier(
        BackboneSpec("tiny_resnet", num_stages=2, stage_channels=(channels, channels), num_classes=4),
        flows=2,
        anar=AnarConfig(3),
        seed=seed,
        input_size=8,
    ).astype(np.float64)
    for att in model.body.attentions:
        att.head.weight.data[...] = rng.standard_normal(att.head.weight.shape) * 0.5
    for _, mod in model.modules():
        if isinstance(mod, MFBN):
            mod.gamma.data[:] = 1 + 0.2 * rng.standard_normal(mod.channels)
            mod.alpha.data[:] = 0.2 * rng.standard_normal(mod.channels)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    labels = rng.integers(0, 4, 2)

    def objective():
        logits, _ = model(x)
        return ops.softmax_cross_entropy(logits, labels)

    tensors = dict(model.named_parameters())
    return grad_check(objective, tensors, MODEL_TOL, max_probes=24, rng=rng)


def gradcheck_suite(seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    return op_checks(seed) + [("anar-3 block", anar_check(3, seed)), ("tdaf model L=2 N=2", model_check(seed))]
