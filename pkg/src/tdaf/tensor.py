"""Tensors and the recording tape used for reverse-mode differentiation.

A :class:`Tape` is opened around a forward pass.  Every op executed while a
tape is active appends a node ``(inputs, output, backward)`` to it, so the
append order is the execution order and the backward sweep is simply the
reverse of the node list.  Ops run outside any tape record nothing, which is
how evaluation avoids building graphs.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor dimensions do not fit an op's contract."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    dims = shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


class Parameter(Tensor):
    """A learnable tensor.  Its dotted name is assigned by the owning module."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name


class Node(NamedTuple):
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of the ops run in one forward pass.

    Use as a context manager; the tape is meant to be discarded after
    :meth:`backward`.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward_sweep(self, loss)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
    """Wrap ``out`` in a Tensor and log the op on the active tape, if any."""
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.nodes.append(Node(tuple(inputs), result, backward))
    return result


def backward_sweep(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``.

    Gradients from several uses of one tensor are summed.  Intermediate grads
    are released as soon as their producing node has been processed.
    """
    if not tape.nodes:
        return
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if tape.nodes[-1].output is not loss:
        raise ValueError("loss is not the terminal node of this tape")

    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(gi, dtype=t.data.dtype, copy=True)
            else:
                t.grad += gi
        if node.output is not loss:
            node.output.grad = None
    tape.nodes.clear()
