"""Mean angle error at fixed horizons, the ZeroV baseline, report files and
an inference timing harness.

Benchmark report schema (JSON)::

    {"config_fingerprint": str, "batch_size": int, "horizon_frames": int,
     "repetitions": int, "warmup": int, "times_ms": [float, ...],
     "mean_ms": float, "median_ms": float, "n_params": int}
"""
from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DimensionError, ParseError
from .skeleton import expmap_to_euler


def horizon_frames(horizons_ms, frame_interval_ms: float, t_f: int | None = None) -> list[int]:
    """80 ms at 40 ms/frame -> frame 2 (1-based)."""
    out = []
    for h in horizons_ms:
        k = h / frame_interval_ms
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ConfigError(f"horizon {h} ms is not a positive whole number of {frame_interval_ms} ms frames")
        k = int(round(k))
        if t_f is not None and k > t_f:
            raise ConfigError(f"horizon {h} ms (frame {k}) is beyond the prediction length {t_f}")
        out.append(k)
    return out


def _batched(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 3 else a


def mae_at_horizons(pred, target, horizons_ms, frame_interval_ms: float) -> np.ndarray:
    """Per horizon: mean over samples of the l2 norm of the full-pose ZYX
    Euler difference. Accepts ``[T_f, M, 3]`` or ``[N, T_f, M, 3]``."""
    pred, target = _batched(pred), _batched(target)
    if pred.shape != target.shape or pred.ndim != 4 or pred.shape[-1] != 3:
        raise DimensionError(f"mae: prediction {pred.shape} vs target {target.shape}")
    ks = horizon_frames(horizons_ms, frame_interval_ms, pred.shape[1])
    idx = [k - 1 for k in ks]
    diff = expmap_to_euler(pred[:, idx]) - expmap_to_euler(target[:, idx])     # [N, H, M, 3]
    n = diff.shape[0]
    return np.linalg.norm(diff.reshape(n, len(idx), -1), axis=-1).mean(axis=0)


def zerov_predictions(inputs, t_f: int) -> np.ndarray:
    inputs = _batched(inputs)
    return np.repeat(inputs[:, -1:], t_f, axis=1)


def zerov_baseline(inputs, targets, horizons_ms, frame_interval_ms: float) -> np.ndarray:
    """MAE of repeating the last observed pose."""
    targets = _batched(targets)
    return mae_at_horizons(zerov_predictions(inputs, targets.shape[1]), targets, horizons_ms, frame_interval_ms)


# ------------------------------------------------------------------ reports

@dataclass
class MAEReport:
    horizons_ms: list[float]
    rows: list[tuple[str, list[float]]] = field(default_factory=list)

    def add(self, name: str, values) -> None:
        values = [float(v) for v in values]
        if len(values) != len(self.horizons_ms):
            raise DimensionError(f"report row {name}: {len(values)} values for {len(self.horizons_ms)} horizons")
        self.rows.append((name, values))

    def row(self, name: str) -> list[float]:
        for n, v in self.rows:
            if n == name:
                return v
        raise KeyError(name)

    def to_text(self) -> str:
        head = ["method"] + [f"{_fmt_ms(h)}ms" for h in self.horizons_ms]
        body = [[n] + [f"{v:.4f}" for v in vals] for n, vals in self.rows]
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [head] + body]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method"] + [_fmt_ms(h) for h in self.horizons_ms])
        for n, vals in self.rows:
            w.writerow([n] + [repr(v) for v in vals])
        return buf.getvalue()

    def save(self, stem) -> None:
        stem = Path(stem)
        stem.with_suffix(".txt").write_text(self.to_text())
        stem.with_suffix(".csv").write_text(self.to_csv())


def _fmt_ms(h: float) -> str:
    return str(int(h)) if float(h).is_integer() else repr(float(h))


def parse_report_csv(text: str) -> MAEReport:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0] != "method":
        raise ParseError("report csv:1: expected header starting with 'method'")
    try:
        report = MAEReport([float(h) for h in rows[0][1:]])
        for lineno, r in enumerate(rows[1:], start=2):
            if not r:
                continue
            if len(r) != len(rows[0]):
                raise ParseError(f"report csv:{lineno}: expected {len(rows[0])} columns, found {len(r)}")
            report.add(r[0], [float(v) for v in r[1:]])
    except ValueError as e:
        raise ParseError(f"report csv: non-numeric cell ({e})") from None
    return report


def load_report(path) -> MAEReport:
    return parse_report_csv(Path(path).read_text())


# ------------------------------------------------------------------ timing

@dataclass
class BenchReport:
    config_fingerprint: str
    batch_size: int
    horizon_frames: int
    repetitions: int
    warmup: int
    times_ms: list[float]
    mean_ms: float
    median_ms: float
    n_params: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        try:
            return cls(**json.loads(text))
        except (json.JSONDecodeError, TypeError) as e:
            raise ParseError(f"bench report: {e}") from None


def bench_inference(model, batch, horizon_frames: int, repetitions: int = 10, warmup: int = 1) -> BenchReport:
    """Wall-clock of one encode + ``horizon_frames`` decode steps per
    repetition, single-threaded, after ``warmup`` untimed runs."""
    if repetitions < 1 or horizon_frames < 1 or warmup < 0:
        raise ConfigError("bench: repetitions and horizon_frames must be >= 1, warmup >= 0")
    batch = np.asarray(batch, dtype=np.float64)
    model.eval()
    times = []
    with ag.no_grad():
        for i in range(warmup + repetitions):
            t0 = time.perf_counter()
            model(batch, horizon=horizon_frames)
            dt = (time.perf_counter() - t0) * 1000.0
            if i >= warmup:
                times.append(dt)
    return BenchReport(model.cfg.fingerprint(), int(batch.shape[0]), horizon_frames, repetitions, warmup,
                       times, float(statistics.fmean(times)), float(statistics.median(times)),
                       int(sum(p.data.size for p in model.parameters())))
