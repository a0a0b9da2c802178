"""Multi-Flow Batch Normalization.

One scale/shift pair per channel is shared by every flow; each flow keeps its
own running mean and variance.  A forward call is tagged with the flow whose
statistics it may read and update.
"""
from __future__ import annotations

import numpy as np

from .nn import Module
from .tensor import DEFAULT_DTYPE, Parameter, ShapeError, Tensor, record


class MFBN(Module):
    def __init__(self, channels: int, num_flows: int = 1, momentum: float = 0.1, eps: float = 1e-5):
        if num_flows < 1:
            raise ValueError("num_flows must be positive")
        self.channels = channels
        self.num_flows = num_flows
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, DEFAULT_DTYPE))
        self.alpha = Parameter(np.zeros(channels, DEFAULT_DTYPE))
        self.running_mean = np.zeros((num_flows, channels), DEFAULT_DTYPE)
        self.running_var = np.ones((num_flows, channels), DEFAULT_DTYPE)

    def _own_buffers(self):
        for k in range(self.num_flows):
            yield f"running_mean.flow{k}", self.running_mean[k]
        for k in range(self.num_flows):
            yield f"running_var.flow{k}", self.running_var[k]

    def _cast(self, dtype) -> None:
        super()._cast(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)

    def reset_stats(self) -> "MFBN":
        self.running_mean[...] = 0
        self.running_var[...] = 1
        return self

    def forward(self, x: Tensor, flow: int) -> Tensor:
        return mfbn_forward(x, flow, self)


def mfbn_forward(x: Tensor, flow: int, layer: MFBN) -> Tensor:
    if not 0 <= flow < layer.num_flows:
        raise IndexError(f"flow {flow} out of range for MFBN with {layer.num_flows} flows")
    if x.data.ndim != 4 or x.shape[1] != layer.channels:
        raise ShapeError(f"MFBN expects (N, {layer.channels}, H, W), got {x.shape}")
    n, c, h, w = x.shape
    dt = x.data.dtype.type
    gamma, alpha = layer.gamma, layer.alpha
    g4 = gamma.data.reshape(1, c, 1, 1)

    if layer.training:
        m = n * h * w
        if m < 2:
            raise ValueError("train-mode MFBN needs at least two values per channel (batch * H * W >= 2)")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = (1.0 / np.sqrt(var + dt(layer.eps))).astype(x.dtype)
        xhat = centered * inv_std.reshape(1, c, 1, 1)
        mom = dt(layer.momentum)
        layer.running_mean[flow] = (1 - mom) * layer.running_mean[flow] + mom * mean
        layer.running_var[flow] = (1 - mom) * layer.running_var[flow] + mom * var * dt(m / (m - 1))

        def backward(g):
            gg = gamma.data.dtype.type
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dalpha = g.sum(axis=(0, 2, 3))
            gx = None
            if x.requires_grad:
                # d/dx of gamma * (x - mean) / std with batch-dependent mean and std
                s1 = (dalpha * gamma.data / m).reshape(1, c, 1, 1)
                s2 = (dgamma * gamma.data / m).reshape(1, c, 1, 1)
                gx = (g * g4 - s1 - xhat * s2) * inv_std.reshape(1, c, 1, 1)
            return gx, dgamma.astype(gg), dalpha.astype(gg)
    else:
        inv_std = (1.0 / np.sqrt(layer.running_var[flow].astype(x.dtype) + dt(layer.eps))).astype(x.dtype)
        xhat = (x.data - layer.running_mean[flow].astype(x.dtype).reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)

        def backward(g):
            gx = g * (g4 * inv_std.reshape(1, c, 1, 1)) if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = xhat * g4 + alpha.data.reshape(1, c, 1, 1)
    return record((x, gamma, alpha), out, backward)
