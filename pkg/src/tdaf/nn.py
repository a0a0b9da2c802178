"""Module containers and the parameterized conv/deconv/linear layers."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, Parameter, Tensor


class Module:
    """Base class: child modules and parameters are discovered from attributes.

    Attributes holding a Module, a Parameter, or a list of Modules are walked in
    definition order.  A module reachable along several paths (weight sharing)
    is reported once, under the first path that reaches it.
    """

    training = True

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def _own_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield key, val

    def _own_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def _walk(self, prefix: str, seen: set) -> Iterator[tuple[str, "Module"]]:
        if id(self) in seen:
            return
        seen.add(id(self))
        yield prefix, self
        for key, child in self._children():
            yield from child._walk(f"{prefix}{key}.", seen)

    def modules(self) -> Iterator[tuple[str, "Module"]]:
        yield from self._walk("", set())

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out, seen = [], set()
        for prefix, mod in self.modules():
            for key, p in mod._own_parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    p.name = prefix + key
                    out.append((p.name, p))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(prefix + key, buf) for prefix, mod in self.modules() for key, buf in mod._own_buffers()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data) for name, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            first = (missing or unexpected)[0]
            raise KeyError(f"state mismatch at entry {first!r} (missing {len(missing)}, unexpected {len(unexpected)})")
        for name, dst in own.items():
            src = np.asarray(state[name])
            if src.shape != dst.shape:
                raise ValueError(f"state mismatch at entry {name!r}: shape {src.shape} vs {dst.shape}")
            dst[...] = src

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        """Cast all parameters and buffers in place (float64 for gradient checks)."""
        for _, mod in self.modules():
            mod._cast(dtype)
        return self

    def _cast(self, dtype) -> None:
        for _, p in self._own_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DEFAULT_DTYPE)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1, pad: int | None = None):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Parameter(kaiming_normal(rng, (cout, cin, k, k), cin * k * k))
        self.bias = Parameter(np.zeros(cout, DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Deconv2d(Module):
    """4x4 / stride 2 / pad 1 transposed conv: exactly doubles H and W."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int = 4, stride: int = 2, pad: int = 1):
        ops.check_doubling(k, stride, pad)
        self.stride, self.pad = stride, pad
        # each output pixel receives k*k/stride^2 taps per input channel
        self.weight = Parameter(kaiming_normal(rng, (cin, cout, k, k), cin * k * k // (stride * stride)))
        self.bias = Parameter(np.zeros(cout, DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return ops.deconv2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.weight = Parameter(kaiming_normal(rng, (cout, cin), cin))
        self.bias = Parameter(np.zeros(cout, DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


def make_rng(seed: int) -> np.random.Generator:
    """The project-wide generator: numpy PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent PCG64 streams derived from one seed via SeedSequence."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]
