"""Training loop with seeded batch sampling, loss log and checkpoints, plus
per-action evaluation against ZeroV."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import Checkpoint, load as load_checkpoint_file, save as save_checkpoint_file
from .config import RunConfig, from_dict
from .errors import DataError, LoadError
from .evaluation import MAEReport, mae_at_horizons, zerov_baseline
from .model import DMGNN, make_optimizer, predict, train_step
from .optim import AdamState
from .skeleton import BodySpec, load_body_spec

log = logging.getLogger(__name__)

MODEL_ROW = "DMGNN"
ZEROV_ROW = "ZeroV"


@dataclass
class TrainResult:
    model: DMGNN
    state: AdamState
    losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def batch_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    """Without replacement; the whole set when it is smaller than a batch."""
    if n <= batch_size:
        return np.arange(n)
    return np.sort(rng.choice(n, size=batch_size, replace=False))


def make_checkpoint(model: DMGNN, state: AdamState | None) -> Checkpoint:
    names = [n for n, p in model.named_parameters() if p.requires_grad]
    return Checkpoint(config=model.cfg.to_dict(), params={n: p.data for n, p in model.named_parameters()},
                      buffers=dict(model.named_buffers()), adam=state, adam_names=names if state else [])


def restore_model(ckpt: Checkpoint, body: BodySpec | None = None) -> DMGNN:
    cfg = from_dict(ckpt.config).validate()
    if body is None:
        body = load_body_spec(cfg.data.body_spec)
    model = DMGNN(cfg, body)
    model.load_state_dict({**ckpt.params, **ckpt.buffers})
    return model


def load_model(path, body: BodySpec | None = None) -> DMGNN:
    try:
        ckpt = load_checkpoint_file(path)
    except OSError as e:
        raise LoadError(f"cannot read checkpoint {path}: {e}") from None
    return restore_model(ckpt, body)


def train(cfg: RunConfig, inputs: np.ndarray, targets: np.ndarray, body: BodySpec | None = None,
          out_dir=None, steps: int | None = None, model: DMGNN | None = None,
          on_step=None) -> TrainResult:
    """Train on stacked windows ``[N, T_h, M, 3]`` / ``[N, T_f, M, 3]``.

    With ``out_dir`` set, writes ``config.json`` (resolved), ``loss_log.csv``,
    ``checkpoint_<step>.ckpt`` every ``train.checkpoint_every`` steps and the
    final ``checkpoint.ckpt``. ``on_step(step, loss)`` returning True ends
    training after that step.
    """
    cfg = cfg.resolved().validate()
    tc = cfg.train
    steps = tc.steps if steps is None else steps
    if len(inputs) == 0:
        raise DataError("no training windows")
    if targets.shape[1] != cfg.decoder.horizon:
        raise DataError(f"targets have {targets.shape[1]} frames, decoder horizon is {cfg.decoder.horizon}")
    if body is None:
        body = load_body_spec(cfg.data.body_spec)
    model = DMGNN(cfg, body) if model is None else model
    state = make_optimizer(model, cfg)
    rng = np.random.default_rng([cfg.seed, 0x5A4D])
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult(model, state)
    log_fh = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        log_fh = open(out / "loss_log.csv", "w", newline="")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(["step", "lr", "loss"])
    try:
        for step in range(steps):
            state.lr = tc.lr_at(step)
            idx = batch_indices(rng, len(inputs), tc.batch_size)
            loss = train_step(inputs[idx], targets[idx], model, state, tc.clip_norm, step=step)
            result.losses.append(loss)
            if writer is not None:
                writer.writerow([step, repr(state.lr), repr(loss)])
            if (step + 1) % tc.log_every == 0 or step == steps - 1:
                log.info("step %d loss %.6f lr %.3g", step + 1, loss, state.lr)
            if out is not None and tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0:
                p = out / f"checkpoint_{step + 1}.ckpt"
                save_checkpoint_file(p, make_checkpoint(model, state))
                result.checkpoints.append(p)
            if on_step is not None and on_step(step, loss):
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        p = out / "checkpoint.ckpt"
        save_checkpoint_file(p, make_checkpoint(model, state))
        result.checkpoints.append(p)
    return result


def evaluate(model: DMGNN, samples, horizons_ms, frame_interval_ms: float,
             batch_size: int = 64) -> MAEReport:
    """Per-action model and ZeroV rows, then the mean over actions as
    ``DMGNN`` / ``ZeroV``."""
    if not samples:
        raise DataError("no evaluation windows")
    by_action: dict[str, list] = {}
    for s in samples:
        by_action.setdefault(s.action, []).append(s)
    report = MAEReport([float(h) for h in horizons_ms])
    model_rows, zero_rows = [], []
    for action, group in by_action.items():
        x = np.stack([s.input for s in group])
        y = np.stack([s.target for s in group])
        pred = predict(model, x, batch_size, horizon=y.shape[1])
        m = mae_at_horizons(pred, y, horizons_ms, frame_interval_ms)
        z = zerov_baseline(x, y, horizons_ms, frame_interval_ms)
        report.add(f"{action}/{MODEL_ROW}", m)
        report.add(f"{action}/{ZEROV_ROW}", z)
        model_rows.append(m)
        zero_rows.append(z)
    report.add(MODEL_ROW, np.mean(model_rows, axis=0))
    report.add(ZEROV_ROW, np.mean(zero_rows, axis=0))
    return report


def eval_loss(model: DMGNN, inputs, targets) -> float:
    """Eval-mode l1 loss over a stacked set."""
    with ag.no_grad():
        pred = predict(model, inputs, horizon=targets.shape[1])
    return float(np.abs(pred - targets).reshape(len(pred), -1).sum(axis=1).mean())
