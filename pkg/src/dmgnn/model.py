"""Multiscale encoder, graph-GRU residual decoder, l1 loss and train step."""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import DecoderConfig, EncoderConfig, RunConfig
from .errors import ConfigError, ContractError, DimensionError, TrainingError
from .layers import CsFb, GGruCell, SsGcb
from .nn import Linear, Module
from .optim import AdamState, adam_step, clip_global_norm, global_norm
from .skeleton import BodySpec, build_scale_maps, difference_transform, init_adjacency


def _bctm(shape) -> tuple[int, ...]:
    """[B, T, M, C] -> [B, C, M, T] for shape reports."""
    b, t, m, c = shape
    return (b, c, m, t)


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, body: BodySpec, rng, drop_rng):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.scale_ids = list(cfg.scales)
        specs = [body.scale(s) for s in self.scale_ids]
        maps = [build_scale_maps(s) for s in specs]
        self.aggregate = [m.aggregate for m in maps]
        self.broadcast = [m.broadcast for m in maps]
        c_in = 3 * (cfg.beta_max + 1)
        strides = cfg.resolved_strides()
        t = cfg.input_frames
        self.stages = []
        self.fusions = []
        for u in range(cfg.n_mgcu):
            c_out = cfg.channels[u]
            stage = [SsGcb(init_adjacency(spec), c_in, c_out, strides[u], cfg.kernel_size,
                           cfg.dropout, rng, drop_rng, cfg.freeze_adjacency, cfg.bn_momentum)
                     for spec in specs]
            self.stages.append(stage)
            t = stage[0].output_length(t)
            if t < 1:
                raise ConfigError(f"encoder: MGCU {u + 1} leaves no frames (input_frames too small)")
            fusion = {}
            if u + 1 in cfg.csfb_positions:
                for i in range(len(specs) - 1):
                    pairs = [(i, i + 1)] + ([(i + 1, i)] if cfg.csfb_bidirectional else [])
                    for src, dst in pairs:
                        fusion[f"{src}to{dst}"] = CsFb(c_out, t, cfg.csfb_hidden, rng, drop_rng,
                                                       cfg.kernel_size, cfg.csfb_stride, cfg.dropout,
                                                       cfg.csfb_softmax, cfg.bn_momentum)
            self.fusions.append(fusion)
            c_in = c_out
        self.final = SsGcb(init_adjacency(specs[0]), c_in, c_in, 1, cfg.kernel_size, cfg.dropout,
                           rng, drop_rng, cfg.freeze_adjacency, cfg.bn_momentum)
        self.out_frames = t

    def input_features(self, window: np.ndarray) -> np.ndarray:
        """[B, T_h, M, 3] expmaps -> [B, T_h, M, 3(beta+1)] difference stack."""
        return difference_transform(window, self.cfg.beta_max)

    def forward(self, window, trace: dict | None = None) -> Tensor:
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 4 or window.shape[1] != self.cfg.input_frames:
            raise ContractError(
                f"encoder: expected [B, {self.cfg.input_frames}, M, 3] input window, got {window.shape}")
        feats = self.input_features(window)
        xs = [ag.as_tensor(np.matmul(agg, feats)) for agg in self.aggregate]
        if trace is not None:
            trace["input"] = [_bctm(x.shape) for x in xs]
            trace["stages"] = []
            trace["graphs"] = []
        for u, stage in enumerate(self.stages):
            xs = [blk(x) for blk, x in zip(stage, xs)]
            if trace is not None:
                trace["stages"].append([_bctm(x.shape) for x in xs])
            fusion = self.fusions[u]
            if fusion:
                deltas = [None] * len(xs)
                graphs = {}
                for key, layer in fusion.items():
                    src, dst = (int(v) for v in key.split("to"))
                    graph = layer.infer_graph(xs[src], xs[dst])
                    graphs[key] = graph
                    msg = layer.message(xs[src], graph)
                    deltas[dst] = msg if deltas[dst] is None else deltas[dst] + msg
                xs = [x if d is None else x + d for x, d in zip(xs, deltas)]
                if trace is not None:
                    trace["graphs"].append(graphs)
        joint = xs[0]
        fused = joint
        for bc, x in zip(self.broadcast[1:], xs[1:]):
            fused = fused + ag.matmul(bc, x) * self.cfg.lam
        h = self.final(fused)
        pooled = h.mean(axis=1)                # [B, M, C]
        if trace is not None:
            trace["joint_branch"] = joint
            trace["scale_features"] = xs
            trace["fused"] = fused
            trace["final"] = _bctm(h.shape)
            trace["pooled"] = pooled.shape
        return pooled


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, beta_max: int, adjacency: np.ndarray, rng):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.beta_max = beta_max
        self.in_dim = 3 * (beta_max + 1)
        self.cell = GGruCell(self.in_dim, cfg.hidden, adjacency, rng, plain=cfg.plain_gru)
        self.head1 = Linear(cfg.hidden, cfg.head_hidden, rng)
        self.head2 = Linear(cfg.head_hidden, 3, rng)

    def head(self, h) -> Tensor:
        return self.head2(ag.relu(self.head1(h)))

    def step_input(self, buf: list) -> Tensor:
        """diff_beta of the newest frame from the rolling buffer (oldest first)."""
        x = buf[-1]
        parts = [x]
        if self.beta_max >= 1:
            parts.append(x - buf[-2])
        if self.beta_max >= 2:
            parts.append(x - buf[-2] * 2.0 + buf[-3])
        return ag.concat(parts, axis=-1) if len(parts) > 1 else x

    def forward(self, tail, h0, horizon: int | None = None, targets=None,
                rng: np.random.Generator | None = None, trace: dict | None = None) -> Tensor:
        """tail: ``[B, >= beta+1, M, 3]`` most recent observed frames;
        h0: ``[B, M, hidden]``. Returns ``[B, horizon, M, 3]``."""
        horizon = self.cfg.horizon if horizon is None else horizon
        if horizon < 1:
            raise ConfigError(f"decoder: horizon must be >= 1, got {horizon}")
        tail = np.asarray(tail, dtype=np.float64)
        need = self.beta_max + 1
        if tail.ndim != 4 or tail.shape[1] < need:
            raise ContractError(f"decoder: need [B, >= {need}, M, 3] observed tail, got {tail.shape}")
        buf = [ag.as_tensor(tail[:, i]) for i in range(tail.shape[1] - need, tail.shape[1])]
        h = h0
        x = buf[-1]
        preds = []
        tf = self.cfg.teacher_forcing if self.training and targets is not None else 0.0
        for t in range(horizon):
            inp = self.step_input(buf)
            if trace is not None and t == 0:
                trace["gru_input"] = inp.shape
            h = self.cell(inp, h)
            x = x + self.head(h)
            preds.append(x)
            nxt = x
            if tf > 0.0 and rng is not None and rng.random() < tf:
                nxt = ag.as_tensor(np.asarray(targets)[:, t])
                x = nxt
            buf = buf[1:] + [nxt]
        if trace is not None:
            trace["hidden"] = h.shape
        return ag.stack(preds, axis=1)


class DMGNN(Module):
    def __init__(self, cfg: RunConfig, body: BodySpec, seed: int | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        seed = cfg.seed if seed is None else seed
        init_ss, drop_ss, loop_ss = np.random.SeedSequence(seed).spawn(3)
        rng = np.random.default_rng(init_ss)
        self.drop_rng = np.random.default_rng(drop_ss)
        self.loop_rng = np.random.default_rng(loop_ss)
        self.body = body
        self.encoder = Encoder(cfg.encoder, body, rng, self.drop_rng)
        self.decoder = Decoder(cfg.decoder, cfg.encoder.beta_max,
                               init_adjacency(body.scale(1)), rng)

    def forward(self, window, targets=None, horizon: int | None = None, trace: dict | None = None) -> Tensor:
        window = np.asarray(window, dtype=np.float64)
        h0 = self.encoder(window, trace=trace)
        return self.decoder(window, h0, horizon=horizon, targets=targets, rng=self.loop_rng, trace=trace)

    def zero_output_head(self) -> None:
        for p in self.decoder.head2.parameters():
            p.data[...] = 0.0


def encode(window, model: DMGNN, trace: dict | None = None) -> Tensor:
    return model.encoder(window, trace=trace)


def decode(tail, h0, model: DMGNN, horizon: int | None = None) -> Tensor:
    return model.decoder(tail, h0, horizon=horizon)


def l1_loss(pred, target) -> Tensor:
    """Batch mean of the per-sample summed absolute error."""
    pred, target = ag.as_tensor(pred), ag.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: prediction {pred.shape} vs target {target.shape}")
    return ag.abs_(pred - target).sum() / pred.shape[0]


def train_step(window, target, model: DMGNN, state: AdamState, clip_norm: float = 0.5,
               step: int | None = None) -> float:
    """Forward, l1 loss, backward, global-norm clip, Adam. Returns the
    pre-update loss."""
    model.train()
    params = model.parameters(trainable_only=True)
    tape = ag.get_tape()
    tape.clear()
    loss = l1_loss(model(window, targets=target), target)
    value = loss.item()
    if not math.isfinite(value):
        tape.clear()
        raise TrainingError(f"non-finite loss {value} at step {step if step is not None else state.step}")
    ag.backward(loss)
    norm = global_norm(params)
    if not math.isfinite(norm):
        raise TrainingError(f"non-finite gradient norm at step {step if step is not None else state.step}")
    clip_global_norm(params, clip_norm)
    adam_step(params, state)
    return value


def make_optimizer(model: DMGNN, cfg: RunConfig) -> AdamState:
    t = cfg.train
    return AdamState.for_params(model.parameters(trainable_only=True), lr=t.lr, beta1=t.beta1,
                                beta2=t.beta2, eps=t.eps)


def predict(model: DMGNN, windows: np.ndarray, batch_size: int = 64, horizon: int | None = None) -> np.ndarray:
    model.eval()
    out = []
    with ag.no_grad():
        for i in range(0, len(windows), batch_size):
            out.append(model(windows[i:i + batch_size], horizon=horizon).data)
    return np.concatenate(out, axis=0)
