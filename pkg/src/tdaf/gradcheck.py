"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class BlockResult:
    name: str
    size: int
    checked: int
    max_rel_error: float
    failure: str | None = None


@dataclass
class GradCheckReport:
    tolerance: float
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return all(b.failure is None and b.max_rel_error < self.tolerance for b in self.blocks)

    def lines(self) -> list[str]:
        out = []
        for b in self.blocks:
            status = "ok" if b.failure is None and b.max_rel_error < self.tolerance else "FAIL"
            extra = f" ({b.failure})" if b.failure else ""
            out.append(f"{status:4s} {b.name:48s} n={b.size:<7d} probed={b.checked:<5d} rel_err={b.max_rel_error:.3e}{extra}")
        return out


def grad_check(
    objective: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    tolerance: float = 1e-6,
    step: float = 1e-6,
    max_probes: int | None = 32,
    rng: np.random.Generator | None = None,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare tape gradients of ``objective()`` against central differences.

    ``objective`` must rebuild the scalar from the current values of
    ``tensors`` on every call, and all tensors should be float64.  For blocks
    larger than ``max_probes`` a random subset of coordinates is probed.  The
    error of a block is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``
    over its probed coordinates; the floor keeps blocks whose true gradient is
    zero (a conv bias feeding batch normalization) from dividing roundoff by
    roundoff.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.grad = None
    with Tape() as tape:
        loss = objective()
    tape.backward(loss)
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in tensors.items()}

    report = GradCheckReport(tolerance)
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_probes is None or n <= max_probes else rng.choice(n, max_probes, replace=False)
        num = np.empty(len(idx))
        failure = None
        for j, i in enumerate(idx):
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = float(objective().data)
            flat[i] = orig - h
            fm = float(objective().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                failure = f"non-finite objective probing {name}[{np.unravel_index(i, t.shape)}]"
                break
            num[j] = (fp - fm) / (2 * h)
        if failure:
            report.blocks.append(BlockResult(name, n, len(idx), float("inf"), failure))
            continue
        ana = analytic[name].reshape(-1)[idx]
        if not np.all(np.isfinite(ana)):
            report.blocks.append(BlockResult(name, n, len(idx), float("inf"), f"non-finite analytic gradient in {name}"))
            continue
        denom = max(np.abs(ana).max(), np.abs(num).max(), floor)
        err = float(np.abs(ana - num).max() / denom)
        report.blocks.append(BlockResult(name, n, len(idx), err))
    for t in tensors.values():
        t.grad = None
    return report
