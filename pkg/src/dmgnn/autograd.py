"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every differentiable op appends a node to the active :class:`Tape` when at
least one input requires grad. :func:`backward` replays the tape in reverse
and then clears it.

Layout convention for motion features is channels-last, ``[B, T, M, C]``
(batch, time, node, channel), so node mixing and channel mixing are both
plain matmuls.
"""
from __future__ import annotations

import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_local = threading.local()


class Node:
    __slots__ = ("out", "parents", "backward_fn", "kind")

    def __init__(self, kind, out, parents, backward_fn):
        self.kind = kind
        self.out = weakref.ref(out)  # a strong ref would cycle through out._node
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops. Not shareable across threads."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.enabled = True

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextmanager
def no_grad():
    tape = get_tape()
    prev, tape.enabled = tape.enabled, False
    try:
        yield
    finally:
        tape.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(Tensor)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        if isinstance(o, (int, float)):
            return scale(self, o)
        return mul(self, o)

    def __rmul__(self, o):
        return self.__mul__(o)

    def __truediv__(self, o):
        if not isinstance(o, (int, float)):
            raise TypeError("only division by a python scalar is supported")
        return scale(self, 1.0 / o)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def abs(self):
        return abs_(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _result(kind: str, data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor._wrap(data)
    tape = get_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = Node(kind, out, tuple(parents), backward_fn)
        out._node = node
        tape.record(node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _result("mul", ad * bd, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _result("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def abs_(a) -> Tensor:
    # sign(0) == 0: the subgradient at the kink is taken as zero
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return _result("abs", np.abs(a.data), (a,), lambda g: (g * sgn,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result("softmax", s, (a,), bw)


# ------------------------------------------------------------------ reductions

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(np.asarray(out).size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result("mean", np.asarray(out), (a,), bw)


# ------------------------------------------------------------------ shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise DimensionError(
                f"concat: shapes {[x.shape for x in ts]} differ off axis {ax}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _result("concat", np.concatenate([t.data for t in ts], axis=ax), ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % (ts[0].ndim + 1)
    return concat([reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts], axis=ax)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def bw(g):
        out = np.zeros(shape)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _result("getitem", np.array(a.data[idx]), (a,), bw)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy batching; both operands need ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands need ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner axes differ (a axis -1 = {a.shape[-1]}, b axis -2 = {b.shape[-2]})")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if ad.ndim == 2 and bd.ndim > 2:
                # shared left matrix (adjacency): contract every batch axis at once
                gt = np.moveaxis(g, -2, 0).reshape(g.shape[-2], -1)
                bt = np.moveaxis(np.broadcast_to(bd, g.shape[:-2] + bd.shape[-2:]), -2, 0)
                ga = gt @ bt.reshape(bt.shape[0], -1).T
            else:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # shared right matrix (weight)
                gb = np.broadcast_to(ad, g.shape[:-1] + ad.shape[-1:]).reshape(-1, ad.shape[-1]).T \
                    @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result("matmul", out, (a, b), bw)


bmm = matmul


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum. Every index of an operand must appear in the other
    operand or in the output (no operand-private reductions)."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if len(set(s)) != len(s):
            raise ContractError(f"einsum: repeated index in operand '{s}'")
        if any(c not in other and c not in out_sub for c in s):
            raise ContractError(f"einsum: operand '{s}' has a private summed index")
    try:
        out = np.einsum(subscripts, a.data, b.data, optimize=True)
    except ValueError as e:
        raise DimensionError(f"einsum '{subscripts}': {e} (shapes {a.shape}, {b.shape})") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, bd, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, ad, optimize=True) if b.requires_grad else None
        return ga, gb

    return _result("einsum", np.asarray(out), (a, b), bw)


# ------------------------------------------------------------------ conv / norm

def conv_out_len(t: int, kernel: int, stride: int, pad: int) -> int:
    return (t + 2 * pad - kernel) // stride + 1


def conv1d_time(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Temporal convolution applied independently at every node.

    x: ``[B, T, *nodes, C_in]``; w: ``[C_out, C_in, K]``; b: ``[C_out]``.
    Returns ``[B, T_out, *nodes, C_out]``.
    """
    x, w = as_tensor(x), as_tensor(w)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        parents.append(b)
    c_out, c_in, k = w.shape
    if x.shape[-1] != c_in:
        raise DimensionError(f"conv1d_time: input channel axis -1 is {x.shape[-1]}, weight expects {c_in}")
    if b is not None and b.shape != (c_out,):
        raise DimensionError(f"conv1d_time: bias shape {b.shape} != ({c_out},)")
    t = x.shape[1]
    t_out = conv_out_len(t, k, stride, pad)
    if t_out < 1:
        raise DimensionError(f"conv1d_time: time axis 1 of length {t} too short for kernel {k}, pad {pad}")
    pad_width = [(0, 0)] * x.ndim
    pad_width[1] = (pad, pad)
    xp = np.pad(x.data, pad_width)
    span = stride * (t_out - 1) + 1
    col = np.stack([xp[:, j:j + span:stride] for j in range(k)], axis=-2)  # [B, T_out, *nodes, K, C_in]
    lead = col.shape[:-2]
    col2 = col.reshape(-1, k * c_in)
    w2 = w.data.transpose(2, 1, 0).reshape(k * c_in, c_out)
    out = col2 @ w2
    if b is not None:
        out = out + b.data
    out = out.reshape(lead + (c_out,))
    xshape = xp.shape

    def bw(g):
        g2 = g.reshape(-1, c_out)
        gw = (col2.T @ g2).reshape(k, c_in, c_out).transpose(2, 1, 0) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcol = (g2 @ w2.T).reshape(lead + (k, c_in))
            gxp = np.zeros(xshape)
            for j in range(k):
                gxp[:, j:j + span:stride] += gcol[..., j, :]
            gx = gxp[:, pad:pad + t]
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _result("conv1d_time", out, parents, bw)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over every axis but the last.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the running buffers are
    used and the op is a fixed affine map.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: channel axis -1 is {c}, affine params {gamma.shape}/{beta.shape}")
    axes = tuple(range(x.ndim - 1))
    gd = gamma.data
    if training:
        n = x.data.size // c
        mu = x.data.mean(axis=axes)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes)
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = xc * invstd
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))

        def bw(g):
            dxhat = g * gd
            gx = invstd / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        invstd = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * invstd

        def bw(g):
            return g * gd * invstd, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result("batch_norm", xhat * gd + beta.data, (x, gamma, beta), bw)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: a generator is required in training mode")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# ------------------------------------------------------------------- backward

def backward(root: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every participating tensor
    that requires grad, then clear the tape."""
    if root.data.size != 1:
        raise ContractError(f"backward: root must be a scalar, got shape {root.shape}")
    tape = tape or get_tape()
    seed = np.ones_like(root.data)
    if root._node is None:
        if root.requires_grad:
            root.grad = seed if root.grad is None else root.grad + seed
        tape.clear()
        return
    pending = {root._node: seed}
    for node in reversed(tape.nodes):
        g = pending.pop(node, None)
        out = node.out()
        if out is not None:
            out._node = None
            if g is not None:
                out.grad = g
        if g is None:
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._node is None:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            else:
                prev = pending.get(p._node)
                pending[p._node] = pg if prev is None else prev + pg
    tape.clear()


# ------------------------------------------------------------------ dispatcher

_OPS: dict[str, Callable] = {
    "matmul": matmul, "bmm": matmul, "add": add, "sub": sub, "mul": mul,
    "scale": scale, "relu": relu, "sigmoid": sigmoid, "tanh": tanh,
    "softmax": softmax, "concat": lambda *ts, axis=0: concat(ts, axis),
    "mean": mean, "sum": sum_, "conv1d_time": conv1d_time, "dropout": dropout,
    "batch_norm": batch_norm, "transpose": transpose, "reshape": reshape,
    "abs": abs_, "einsum": einsum, "getitem": getitem,
}


def forward_op(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Name-based entry point: ``forward_op("relu", [x])``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind {kind!r}") from None
    if kind == "einsum":
        return fn(attrs.pop("subscripts"), *inputs)
    return fn(*inputs, **attrs)
