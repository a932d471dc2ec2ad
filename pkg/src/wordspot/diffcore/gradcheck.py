"""Central finite-difference checks against the backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .node import Node

FD_STEP = 1e-5


@dataclass
class BlockReport:
    name: str
    checked: int
    max_abs_error: float
    rel_error: float


@dataclass
class GradCheckReport:
    tolerance: float
    blocks: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((b.rel_error for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def lines(self):
        for b in self.blocks:
            yield f"{b.name:<32} n={b.checked:<6} rel={b.rel_error:.3e} abs={b.max_abs_error:.3e}"


def grad_check(fn: Callable[[], Node], params: Mapping[str, Node], tolerance: float = 1e-4,
               step: float = FD_STEP, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic and numeric gradients of the scalar ``fn()``.

    ``fn`` must rebuild the graph from the current parameter values on every
    call.  With ``max_entries`` only a random subset of each block is probed.
    The error of a block is ``|a - n|_2 / (|a|_2 + |n|_2)`` over the probed
    entries, 0 when both are exactly zero.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    out = fn()
    if out.value.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = {name: (np.zeros(p.shape) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = GradCheckReport(tolerance)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            idx = np.arange(flat.size)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn().value)
            flat[i] = orig - step
            fm = float(fn().value)
            flat[i] = orig
            numeric[k] = (fp - fm) / (2.0 * step)
        a = analytic[name].reshape(-1)[idx]
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        diff = np.linalg.norm(a - numeric)
        rel = 0.0 if denom == 0.0 else diff / denom
        max_abs = float(np.max(np.abs(a - numeric))) if len(idx) else 0.0
        report.blocks.append(BlockReport(name, len(idx), max_abs, float(rel)))
    for p in params.values():
        p.zero_grad()
    return report
