"""SGD with classic momentum and coupled weight decay, plus step decay."""
from __future__ import annotations

import numpy as np

from .tensor import Parameter


class SGD:
    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[int, np.ndarray] = {}

    def step(self) -> None:
        """v <- m*v + g + wd*w ; w <- w - lr*v ; then clear grads.

        Parameters that received no gradient (unreachable from the loss) are
        left untouched.
        """
        live = [p for p in self.params if p.grad is not None]
        if not live:
            raise RuntimeError("sgd step before backward: no parameter has a gradient")
        for p in live:
            d = p.grad
            if self.weight_decay:
                d = d + p.data.dtype.type(self.weight_decay) * p.data
            v = self.velocity.get(id(p))
            if v is None or not self.momentum:
                v = np.array(d, copy=True)
            else:
                v *= p.data.dtype.type(self.momentum)
                v += d
            self.velocity[id(p)] = v
            p.data -= p.data.dtype.type(self.lr) * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class StepSchedule:
    """Multiply the base rate by ``factor`` at each milestone epoch."""

    def __init__(self, base_lr: float, milestones: list[int], factor: float = 0.1):
        self.base_lr = base_lr
        self.milestones = sorted(milestones)
        self.factor = factor

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for m in self.milestones if epoch >= m)
        return self.base_lr * self.factor**passed
