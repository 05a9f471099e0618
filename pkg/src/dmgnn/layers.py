"""Single-scale graph conv block, cross-scale fusion block and graph GRU.

Feature tensors are channels-last: ``[B, T, M, C]``.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .nn import BatchNorm, Conv1dTime, Dropout, Linear, Module, Parameter, uniform_init


def graph_conv(x, a, w, u) -> Tensor:
    """ReLU(A X W + X U) over the node axis -2 of ``x`` (``[..., M, C]``)."""
    return ag.relu(_graph_linear(x, a, w, u))


def _graph_linear(x, a, w, u) -> Tensor:
    x = ag.as_tensor(x)
    m = x.shape[-2]
    if a.shape != (m, m):
        raise DimensionError(f"graph_conv: adjacency {a.shape} does not match node axis -2 of size {m}")
    if w.shape[0] != x.shape[-1] or w.shape != u.shape:
        raise DimensionError(
            f"graph_conv: channel axis -1 is {x.shape[-1]}, weights W {w.shape} / U {u.shape}")
    return ag.matmul(a, ag.matmul(x, w)) + ag.matmul(x, u)


class SsGcb(Module):
    """graph conv -> BN -> ReLU -> temporal conv -> BN -> dropout -> ReLU."""

    def __init__(self, adjacency: np.ndarray, c_in: int, c_out: int, stride: int, kernel: int,
                 dropout: float, rng: np.random.Generator, drop_rng: np.random.Generator,
                 freeze_adjacency: bool = False, bn_momentum: float = 0.1):
        super().__init__()
        self.A = Parameter(adjacency, requires_grad=not freeze_adjacency)
        self.W = Parameter(uniform_init(rng, (c_in, c_out), c_in))
        self.U = Parameter(uniform_init(rng, (c_in, c_out), c_in))
        self.bn_graph = BatchNorm(c_out, bn_momentum)
        self.tconv = Conv1dTime(c_out, c_out, kernel, stride, kernel // 2, rng)
        self.bn_time = BatchNorm(c_out, bn_momentum)
        self.drop = Dropout(dropout, drop_rng)

    def output_length(self, t: int) -> int:
        return ag.conv_out_len(t, self.tconv.weight.shape[2], self.tconv.stride, self.tconv.pad)

    def forward(self, x):
        if self.output_length(x.shape[1]) < 1:
            raise ConfigError(f"SS-GCB: input length {x.shape[1]} leaves no output frames")
        y = ag.relu(self.bn_graph(_graph_linear(x, self.A, self.W, self.U)))
        y = self.tconv(y)
        return ag.relu(self.drop(self.bn_time(y)))


class _PairMlp(Module):
    """f(.) of the relative aggregation: [p_i, p_j - p_i] -> H -> H, summed
    over j. The first layer is split as p_i (Wa - Wb) + p_j Wb so the M^2
    pair tensor is only formed after the wide projection."""

    def __init__(self, p_dim, hidden, dropout, rng, drop_rng, bn_momentum):
        super().__init__()
        self.w1 = Parameter(uniform_init(rng, (2 * p_dim, hidden), 2 * p_dim))
        self.b1 = Parameter(np.zeros(hidden))
        self.drop = Dropout(dropout, drop_rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.bn = BatchNorm(hidden, bn_momentum)
        self.p_dim = p_dim

    def forward(self, p):                      # p: [B, M, P]
        b, m, _ = p.shape
        wa, wb = self.w1[: self.p_dim], self.w1[self.p_dim:]
        own = ag.matmul(p, wa - wb)            # p_i (Wa - Wb)
        other = ag.matmul(p, wb)               # p_j Wb
        hid = own.shape[-1]
        z = own.reshape(b, m, 1, hid) + other.reshape(b, 1, m, hid) + self.b1
        z = ag.relu(self.fc2(self.drop(ag.relu(z))))
        return self.bn(z).sum(axis=2)          # r_i = sum_j f(...)


class _EmbedMlp(Module):
    """g(.): [proj(p_i), r_i] -> H -> H."""

    def __init__(self, hidden, dropout, rng, drop_rng, bn_momentum):
        super().__init__()
        self.fc1 = Linear(2 * hidden, hidden, rng)
        self.drop = Dropout(dropout, drop_rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.bn = BatchNorm(hidden, bn_momentum)

    def forward(self, x):
        return self.bn(ag.relu(self.fc2(self.drop(ag.relu(self.fc1(x))))))


class _NodeEmbedder(Module):
    def __init__(self, channels, t_in, hidden, kernel, stride, dropout, rng, drop_rng, bn_momentum):
        super().__init__()
        self.conv = Conv1dTime(channels, channels, kernel, stride, kernel // 2, rng)
        t_out = ag.conv_out_len(t_in, kernel, stride, kernel // 2)
        if t_out < 1:
            raise ConfigError(f"CS-FB: temporal length {t_in} too short for compression")
        self.p_dim = channels * t_out
        self.f = _PairMlp(self.p_dim, hidden, dropout, rng, drop_rng, bn_momentum)
        self.proj = Linear(self.p_dim, hidden, rng)
        self.g = _EmbedMlp(hidden, dropout, rng, drop_rng, bn_momentum)

    def vectorize(self, x):                    # [B, T, M, C] -> [B, M, T'*C]
        c = self.conv(x)
        b, t, m, ch = c.shape
        return c.transpose(0, 2, 1, 3).reshape(b, m, t * ch)

    def forward(self, x):
        p = self.vectorize(x)
        r = self.f(p)
        return self.g(ag.concat([self.proj(p), r], axis=-1))


class CsFb(Module):
    """Cross-scale fusion from a source scale into a target scale.

    The inferred graph has shape ``[B, M_tgt, M_src]``; with
    ``softmax="source"`` each row (one target node) sums to one.
    """

    def __init__(self, channels: int, t_in: int, hidden: int, rng, drop_rng, kernel: int = 5,
                 stride: int = 2, dropout: float = 0.1, softmax: str = "source",
                 bn_momentum: float = 0.1):
        super().__init__()
        self.src = _NodeEmbedder(channels, t_in, hidden, kernel, stride, dropout, rng, drop_rng, bn_momentum)
        self.tgt = _NodeEmbedder(channels, t_in, hidden, kernel, stride, dropout, rng, drop_rng, bn_momentum)
        self.W_F = Parameter(uniform_init(rng, (channels, channels), channels))
        self.softmax_axis = -1 if softmax == "source" else -2

    def infer_graph(self, x_src, x_tgt) -> Tensor:
        if x_src.shape[1] != x_tgt.shape[1]:
            raise ContractError(
                f"CS-FB: temporal lengths differ (source {x_src.shape[1]}, target {x_tgt.shape[1]})")
        h_src = self.src(x_src)
        h_tgt = self.tgt(x_tgt)
        logits = ag.matmul(h_tgt, h_src.transpose(0, 2, 1))
        return ag.softmax(logits, axis=self.softmax_axis)

    def message(self, x_src, graph) -> Tensor:
        """A X_src W_F, applied at every time stamp: ``[B, T, M_tgt, C]``."""
        b, mt, ms = graph.shape
        if x_src.shape[2] != ms or x_src.shape[0] != b:
            raise DimensionError(f"CS-FB: graph {graph.shape} vs source features {x_src.shape}")
        return ag.matmul(ag.matmul(graph.reshape(b, 1, mt, ms), x_src), self.W_F)

    def forward(self, x_src, x_tgt) -> Tensor:
        return self.message(x_src, self.infer_graph(x_src, x_tgt)) + x_tgt


def infer_cross_graph(x_src, x_tgt, layer: CsFb) -> Tensor:
    return layer.infer_graph(x_src, x_tgt)


def fuse_cross_scale(x_src, x_tgt, graph, layer: CsFb) -> Tensor:
    if x_src.shape[-1] != x_tgt.shape[-1] or x_tgt.shape[-2] != graph.shape[-2]:
        raise DimensionError(f"CS-FB fusion: source {x_src.shape}, target {x_tgt.shape}, graph {graph.shape}")
    return layer.message(x_src, graph) + x_tgt


class GGruCell(Module):
    """GRU whose hidden path is preconditioned by A_H H W_H. With
    ``plain=True`` A_H is the identity (no graph)."""

    def __init__(self, in_dim: int, hidden: int, adjacency: np.ndarray, rng, plain: bool = False):
        super().__init__()
        self.A_H = None if plain else Parameter(adjacency)
        self.W_H = Parameter(uniform_init(rng, (hidden, hidden), hidden))
        self.r_in = Linear(in_dim, hidden, rng)
        self.r_hid = Linear(hidden, hidden, rng)
        self.u_in = Linear(in_dim, hidden, rng)
        self.u_hid = Linear(hidden, hidden, rng)
        self.c_in = Linear(in_dim, hidden, rng)
        self.c_hid = Linear(hidden, hidden, rng)
        self.in_dim, self.hidden = in_dim, hidden
        self.n_nodes = adjacency.shape[0]

    def forward(self, inp, h):
        if inp.shape[-1] != self.in_dim or h.shape[-1] != self.hidden or h.shape[-2] != self.n_nodes:
            raise DimensionError(
                f"G-GRU: input {inp.shape} / hidden {h.shape} vs cell ({self.n_nodes} nodes, "
                f"{self.in_dim} -> {self.hidden})")
        q = ag.matmul(h, self.W_H)
        if self.A_H is not None:
            q = ag.matmul(self.A_H, q)
        r = ag.sigmoid(self.r_in(inp) + self.r_hid(q))
        u = ag.sigmoid(self.u_in(inp) + self.u_hid(q))
        c = ag.tanh(self.c_in(inp) + r * self.c_hid(q))
        return u * h + (1.0 - u) * c


def g_gru_step(inp, h, cell: GGruCell) -> Tensor:
    return cell(inp, h)
