"""Central finite-difference gradient checks against the tape.

The error reported per tensor is ``||g_analytic - g_numeric|| /
max(||g_analytic||, ||g_numeric||, floor)``, so it is scale free and does not
blow up on individual near-zero entries. The floor (default 1e-5) only matters
for gradients that are zero in exact arithmetic, such as a bias feeding a
train-mode batch norm, where the central difference returns rounding noise of
order 1e-10.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class GradReport:
    name: str
    rel_error: float
    analytic_norm: float
    checked: int


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-5) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), floor)
    return float(np.linalg.norm(a - n)) / denom


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                 indices: Sequence[int] | None = None) -> np.ndarray:
    """d fn / d t by central differences over the flat ``indices`` (all by default)."""
    flat = t.data.reshape(-1)
    out = np.zeros(flat.size)
    idx = range(flat.size) if indices is None else indices
    with ag.no_grad():
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = fn().item()
            flat[i] = old - h
            fm = fn().item()
            flat[i] = old
            out[i] = (fp - fm) / (2 * h)
    return out.reshape(t.shape)


def analytic_grads(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
    tape = ag.get_tape()
    tape.clear()
    ag.backward(fn())
    return [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]


def check_gradients(fn: Callable[[], Tensor], named: dict[str, Tensor] | Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> list[GradReport]:
    """Compare tape gradients of the scalar ``fn()`` with central differences.

    ``fn`` must be deterministic (no live dropout). With ``max_entries`` a
    random subset of each tensor's entries is probed, and only those entries
    enter the error.
    """
    if not isinstance(named, dict):
        named = {f"t{i}": t for i, t in enumerate(named)}
    tensors = list(named.values())
    grads = analytic_grads(fn, tensors)
    rng = np.random.default_rng(0) if rng is None else rng
    reports = []
    for (name, t), g in zip(named.items(), grads):
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            idx = np.arange(t.size)
        num = numeric_grad(fn, t, h, idx).reshape(-1)[idx]
        ana = g.reshape(-1)[idx]
        reports.append(GradReport(name, relative_error(ana, num), float(np.linalg.norm(ana)), len(idx)))
    return reports


def worst(reports: Sequence[GradReport]) -> GradReport:
    return max(reports, key=lambda r: r.rel_error)
