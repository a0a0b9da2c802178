import numpy as np
import pytest

from tdaf.tensor import Tape, Tensor


def grads(fn, *tensors):
    """Run ``fn()`` under a tape, backpropagate, and return the input grads."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    return [t.grad for t in tensors]


def conv_ref(x, w, b, stride, pad):
    """Direct sliding-window convolution (cross-correlation)."""
    n, c, h, wd = x.shape
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, w.shape[0], ho, wo))
    for i in range(ho):
        for j in range(wo):
            win = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", win, w)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def deconv_ref(x, w, b, stride, pad):
    """Transposed convolution as an explicit scatter of kernel taps."""
    n, cin, h, wd = x.shape
    cout, k = w.shape[1], w.shape[2]
    full = np.zeros((n, cout, (h - 1) * stride + k, (wd - 1) * stride + k))
    for i in range(h):
        for j in range(wd):
            full[:, :, i * stride : i * stride + k, j * stride : j * stride + k] += np.einsum("nc,cokl->nokl", x[:, :, i, j], w)
    out = full[:, :, pad : full.shape[2] - pad, pad : full.shape[3] - pad]
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
