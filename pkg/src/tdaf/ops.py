"""Differentiable ops on (batch, channel, height, width) tensors.

Each op computes its forward result with numpy and registers a closure that
maps the output gradient to one gradient per input (``None`` where an input
needs none).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, record


def _check_4d(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what}: expected a 4-D (N, C, H, W) tensor, got shape {x.shape}")


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (C*k*k, N*ho*wo) patch matrix, channel-major."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)


def _col2im(cols: np.ndarray, shape: tuple, k: int, stride: int) -> np.ndarray:
    """Scatter-add (C, k, k, N, ho, wo) patches into a (C, N, Hp, Wp) array."""
    ho, wo = cols.shape[4:]
    out = np.zeros(shape, dtype=cols.dtype)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + hs : stride, j : j + ws : stride] += cols[:, i, j]
    return out


def _pad_nhwc(xh: np.ndarray, pad: int) -> np.ndarray:
    """(N, H, W, C) view -> contiguous zero-padded (N, H+2p, W+2p, C)."""
    n, h, w, c = xh.shape
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=xh.dtype)
    out[:, pad : pad + h, pad : pad + w] = xh
    return out


def _patches(xh: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, Hp, Wp, C) -> (N*ho*wo, k*k*C) patch matrix, pixel-major, channels innermost."""
    n, c = xh.shape[0], xh.shape[3]
    win = sliding_window_view(xh, (k, k), axis=(1, 2))
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def _nchw(a: np.ndarray) -> np.ndarray:
    """(C, N, H, W) -> contiguous (N, C, H, W)."""
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3))


def _cmajor(a: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (C, N*H*W)."""
    return a.transpose(1, 0, 2, 3).reshape(a.shape[1], -1)


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    _check_4d(x, "conv2d")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be (C_out, C_in, k, k), got {weight.shape}")
    n, c, h, w = x.shape
    cout, cin, k, _ = weight.shape
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {cin} (input {x.shape}, weight {weight.shape})")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} / pad {pad}")
    if h + 2 * pad - k < 0 or w + 2 * pad - k < 0:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {h}x{w} (pad {pad})")
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: zero-size output for input {h}x{w}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    # Pixel-major layout: patches (N*ho*wo, k*k*C) with channels innermost, so
    # every product keeps the long pixel axis as the leading operand.
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    xh = x.data.transpose(0, 2, 3, 1)
    if k == 1 and pad == 0:
        cols = xh[:, ::stride, ::stride].reshape(n * ho * wo, c)
    else:
        cols = _patches(_pad_nhwc(xh, pad), k, stride, ho, wo)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        gp = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = (cols.T @ gp).T.reshape(cout, k, k, cin).transpose(0, 3, 1, 2) if weight.requires_grad else None
        gb = gp.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            gxp = np.zeros((n, h + 2 * pad, w + 2 * pad, cin), dtype=g.dtype)
            taps = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1))  # (k, k, C_out, C_in)
            for i in range(k):
                for j in range(k):
                    tap = (gp @ taps[i, j]).reshape(n, ho, wo, cin)
                    gxp[:, i : i + hs : stride, j : j + ws : stride] += tap
            gx = np.ascontiguousarray(gxp[:, pad : pad + h, pad : pad + w].transpose(0, 3, 1, 2))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(inputs, out, backward)


def deconv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


def check_doubling(k: int, stride: int, pad: int) -> None:
    """Reject any transposed-conv geometry that does not map H to exactly 2H."""
    if stride != 2 or any(deconv_out_size(h, k, stride, pad) != 2 * h for h in (1, 2, 7)):
        raise ShapeError(f"deconv2d: kernel {k}, stride {stride}, pad {pad} does not double the resolution")


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 2, pad: int = 1) -> Tensor:
    """Transposed convolution, the adjoint of ``conv2d`` with the same geometry."""
    _check_4d(x, "deconv2d")
    if weight.data.ndim != 4:
        raise ShapeError(f"deconv2d: weight must be (C_in, C_out, k, k), got {weight.shape}")
    n, c, h, w = x.shape
    cin, cout, k, _ = weight.shape
    check_doubling(k, stride, pad)
    if c != cin:
        raise ShapeError(f"deconv2d: input has {c} channels but weight expects {cin}")
    hp, wp = (h - 1) * stride + k, (w - 1) * stride + k

    wmat = weight.data.reshape(cin, -1)
    xmat = _cmajor(x.data)
    cols = (wmat.T @ xmat).reshape(cout, k, k, n, h, w)
    out = _col2im(cols, (cout, n, hp, wp), k, stride)[:, :, pad : hp - pad, pad : wp - pad]
    if bias is not None:
        out += bias.data[:, None, None, None]
    out = _nchw(out)

    def backward(g):
        dcols = _im2col(_pad(g, pad), k, stride, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _nchw((wmat @ dcols).reshape(cin, n, h, w))
        if weight.requires_grad:
            gw = (xmat @ dcols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(inputs, out, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record((x,), x.data * mask, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)
    # Keep a few ulps away from 0 and 1: the range stays open where the float
    # type saturates, and m + 0.5 in a junction cannot round onto 0.5 or 1.5.
    margin = 4 * np.finfo(z.dtype).eps
    s = np.clip(s, margin, 1 - margin)
    return record((x,), s, lambda g: (g * s * (1 - s),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def eltwise_mul_add(a: Tensor, b: Tensor, eta: float) -> Tensor:
    """``a * (b + eta)`` with ``b`` broadcast over channels when it has one."""
    _check_4d(a, "eltwise_mul_add")
    _check_4d(b, "eltwise_mul_add")
    if a.shape[2:] != b.shape[2:] or a.shape[0] != b.shape[0]:
        raise ShapeError(f"junction misaligned: features {a.shape} vs attention {b.shape}")
    if b.shape[1] not in (1, a.shape[1]):
        raise ShapeError(f"attention channels {b.shape[1]} cannot broadcast to {a.shape[1]}")
    mult = b.data + a.data.dtype.type(eta)
    out = a.data * mult

    def backward(g):
        ga = g * mult if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = g * a.data
            if b.shape[1] == 1:
                gb = gb.sum(axis=1, keepdims=True)
        return ga, gb

    return record((a, b), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return record((a, b), a.data + b.data, lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    return record((x,), x.data * c, lambda g: (g * c,))


def _check_even(x: Tensor, what: str) -> None:
    _check_4d(x, what)
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"{what}: spatial dims must be even, got {h}x{w}")


def avg_pool_2x2(x: Tensor) -> Tensor:
    _check_even(x, "avg_pool_2x2")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.data.dtype.type(0.25),)

    return record((x,), out, backward)


def max_pool_2x2(x: Tensor) -> Tensor:
    """2x2 max pool; ties send the gradient to the first element in row-major order."""
    _check_even(x, "max_pool_2x2")
    n, c, h, w = x.shape
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return record((x,), out, backward)


def upsample_nearest_2x(x: Tensor) -> Tensor:
    _check_4d(x, "upsample_nearest_2x")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return record((x,), out, lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def global_avg_pool(x: Tensor) -> Tensor:
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = x.data.dtype.type(1.0 / (h * w))
    return record((x,), out, lambda g: (np.broadcast_to(g * inv, x.shape),))


def concat_channels(xs: list[Tensor]) -> Tensor:
    for t in xs:
        _check_4d(t, "concat_channels")
    if len({(t.shape[0],) + t.shape[2:] for t in xs}) != 1:
        raise ShapeError(f"concat_channels: incompatible shapes {[t.shape for t in xs]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])
    out = np.concatenate([t.data for t in xs], axis=1)
    return record(tuple(xs), out, lambda g: [g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs))])


def linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Affine map on (N, C, 1, 1) features with a (K, C) weight."""
    _check_4d(x, "linear")
    n, c, h, w = x.shape
    if (h, w) != (1, 1):
        raise ShapeError(f"linear: input spatial dims must be 1x1, got {h}x{w}")
    k, cw = weight.shape
    if cw != c:
        raise ShapeError(f"linear: input has {c} channels, weight expects {cw}")
    x2 = x.data.reshape(n, c)
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(n, k)
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(inputs, out.reshape(n, k, 1, 1), backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n, k = logits.shape[:2]
    if logits.data.size != n * k:
        raise ShapeError(f"softmax_cross_entropy: logits must be (N, K, 1, 1), got {logits.shape}")
    if labels.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data.reshape(n, k)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return ((p * (g / n)).reshape(logits.shape).astype(logits.dtype),)

    return record((logits,), np.asarray(loss, dtype=logits.dtype), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``<x, weights>``; turns any op output into a probe objective."""
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} vs tensor {x.shape}")
    return record((x,), np.asarray((x.data * w).sum(), dtype=x.dtype), lambda g: (g * w,))
