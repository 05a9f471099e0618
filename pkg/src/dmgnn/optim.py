from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import ContractError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params], **hyper)


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; grads are zeroed afterwards.
    A parameter with ``grad is None`` is treated as having zero gradient."""
    if len(state.m) != len(params) or len(state.v) != len(params):
        raise ContractError(f"adam_step: state tracks {len(state.m)} tensors, got {len(params)} params")
    for p, m in zip(params, state.m):
        if m.shape != p.data.shape:
            raise ContractError(f"adam_step: moment shape {m.shape} != param shape {p.data.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


def global_norm(params: list[Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Rescale the ``.grad`` of every tensor in ``params`` so their joint l2
    norm is at most ``max_norm``. Returns the factor applied (1.0 if none)."""
    norm = global_norm(params)
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad = p.grad * factor
    return factor
