import numpy as np
import pytest

from tdaf import ops
from tdaf.tensor import Parameter, ShapeError, Tape, Tensor, active_tape

from conftest import grads, t64


def test_scalar_chain_rule():
    x = t64(3.0)
    (g,) = grads(lambda: ops.scale(x, 2.0), x)
    assert g == pytest.approx(2.0)


def test_shared_input_grad_is_sum_of_branches(rng):
    x = t64(rng.standard_normal((2, 3, 4, 4)))
    w1, w2 = rng.standard_normal(x.shape), rng.standard_normal(x.shape)

    def both():
        return ops.add(ops.weighted_sum(ops.scale(x, 3.0), w1), ops.weighted_sum(ops.relu(x), w2))

    (g,) = grads(both, x)
    np.testing.assert_allclose(g, 3.0 * w1 + w2 * (x.data > 0), rtol=0, atol=1e-12)


def test_no_recording_without_tape_or_grad():
    x = Tensor(np.ones((1, 1, 2, 2)))
    assert active_tape() is None
    with Tape() as tape:
        ops.relu(x)
    assert tape.nodes == []


def test_tape_cleared_and_intermediates_freed(rng):
    x = t64(rng.standard_normal((1, 2, 4, 4)))
    with Tape() as tape:
        h = ops.relu(x)
        loss = ops.weighted_sum(h, np.ones(h.shape))
    tape.backward(loss)
    assert tape.nodes == []
    assert h.grad is None
    assert x.grad is not None


def test_backward_requires_scalar_loss(rng):
    x = t64(rng.standard_normal((1, 1, 2, 2)))
    with Tape() as tape:
        y = ops.relu(x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_parameter_requires_grad():
    p = Parameter(np.zeros(3))
    assert p.requires_grad and p.shape == (3,)


def test_shape_error_is_value_error():
    assert issubclass(ShapeError, ValueError)
