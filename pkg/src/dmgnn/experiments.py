"""Desk-scale experiments on synthetic periodic motion: memorising a handful
of sequences, beating ZeroV on held-out sequences, and config ablations.

The scripts in ``scripts/`` and the acceptance suite both drive these.
"""
from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, from_dict, reduced_config
from .dataset import SynthSpec, WindowedSample, make_windows, stack_windows, synth_motion
from .errors import ConfigError
from .evaluation import MAEReport
from .skeleton import BodySpec, load_body_spec
from .training import MODEL_ROW, ZEROV_ROW, evaluate, train

log = logging.getLogger(__name__)

HORIZONS_MS = [80.0, 160.0, 320.0, 400.0]


def sequence_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


# ------------------------------------------------------------------ overfitting

@dataclass
class OverfitResult:
    seed: int
    losses: list[float]
    seconds: float
    threshold: float

    @property
    def best(self) -> float:
        return min(self.losses)

    @property
    def reached_at(self) -> int | None:
        """First step whose loss is below the threshold."""
        for i, v in enumerate(self.losses):
            if v < self.threshold:
                return i
        return None


def overfit_config(seed: int, **overrides) -> RunConfig:
    """Reduced model, no dropout, full-batch cosine schedule."""
    base = {"seed": seed, "encoder.dropout": 0.0, "train.lr": 1e-2, "train.lr_schedule": "cosine",
            "train.steps": 2000, "train.batch_size": 8}
    return reduced_config(**{**base, **overrides})


def overfit(seed: int, n_sequences: int = 8, threshold: float = 0.02, cfg: RunConfig | None = None,
            spec: SynthSpec | None = None, body: BodySpec | None = None, stop_early: bool = True) -> OverfitResult:
    """Fit one window from each of ``n_sequences`` synthetic sequences of
    exactly T_h + T_f frames."""
    cfg = overfit_config(seed) if cfg is None else cfg
    t_h, t_f = cfg.encoder.input_frames, cfg.decoder.horizon
    spec = SynthSpec(n_frames=t_h + t_f) if spec is None else spec
    frames = np.stack([synth_motion(spec, s).frames for s in sequence_seeds(seed, n_sequences)])
    body = load_body_spec(cfg.data.body_spec) if body is None else body
    t0 = time.perf_counter()
    res = train(cfg, frames[:, :t_h], frames[:, t_h:], body,
                on_step=(lambda step, loss: loss < threshold) if stop_early else None)
    return OverfitResult(seed, res.losses, time.perf_counter() - t0, threshold)


# ------------------------------------------------------------------ generalisation

def synthetic_benchmark(seed: int = 0, n_train: int = 200, n_test: int = 50, spec: SynthSpec | None = None,
                        t_h: int = 49, t_f: int = 10, train_stride: int = 1, test_stride: int | None = None):
    """In-memory train/test windows from disjoint synthetic sequences."""
    spec = SynthSpec() if spec is None else spec
    seeds = sequence_seeds(seed, n_train + n_test)
    train_w: list[WindowedSample] = []
    test_w: list[WindowedSample] = []
    for i, s in enumerate(seeds):
        seq = synth_motion(spec, s)
        if i < n_train:
            train_w += make_windows(seq, t_h, t_f, train_stride, "synthetic", f"train_{i}")
        else:
            test_w += make_windows(seq, t_h, t_f, test_stride or t_f, "synthetic", f"test_{i}")
    return train_w, test_w, spec.frame_interval_ms


def generalization_config(seed: int = 0, **overrides) -> RunConfig:
    base = {"seed": seed, "train.lr": 3e-3, "train.lr_schedule": "cosine", "train.steps": 1500,
            "train.batch_size": 32}
    return reduced_config(**{**base, **overrides})


@dataclass
class GeneralizationResult:
    report: MAEReport
    seconds: float
    losses: list[float] = field(default_factory=list)

    @property
    def ratio(self) -> list[float]:
        return [m / z for m, z in zip(self.report.row(MODEL_ROW), self.report.row(ZEROV_ROW))]


def generalization(cfg: RunConfig | None = None, windows=None, horizons=HORIZONS_MS,
                   body: BodySpec | None = None) -> GeneralizationResult:
    cfg = generalization_config() if cfg is None else cfg
    train_w, test_w, interval = synthetic_benchmark() if windows is None else windows
    x, y = stack_windows(train_w)
    body = load_body_spec(cfg.data.body_spec) if body is None else body
    t0 = time.perf_counter()
    res = train(cfg, x, y, body)
    report = evaluate(res.model, test_w, horizons, interval)
    return GeneralizationResult(report, time.perf_counter() - t0, res.losses)


# ------------------------------------------------------------------ ablation

def expand_matrix(matrix: dict) -> list[tuple[str, dict]]:
    """``{"sweeps": [{"field", "values"}], "variants": [{"name", "overrides"}]}``
    -> ordered (name, overrides) pairs. Sweeps vary one field each."""
    known = {"base", "sweeps", "variants", "seeds", "steps"}
    extra = set(matrix) - known
    if extra:
        raise ConfigError(f"ablation matrix: unknown field(s) {sorted(extra)}")
    out = []
    for sw in matrix.get("sweeps", []):
        if "field" not in sw or "values" not in sw:
            raise ConfigError("ablation matrix: each sweep needs 'field' and 'values'")
        for v in sw["values"]:
            out.append((f"{sw['field']}={json.dumps(v)}", {sw["field"]: v}))
    for var in matrix.get("variants", []):
        if "name" not in var:
            raise ConfigError("ablation matrix: each variant needs a 'name'")
        out.append((var["name"], dict(var.get("overrides", {}))))
    if not out:
        raise ConfigError("ablation matrix: no sweeps or variants")
    return out


def run_ablation(base: RunConfig, matrix: dict, train_w, test_w, interval: float, horizons,
                 out_dir=None, body: BodySpec | None = None) -> tuple[MAEReport, dict[str, str]]:
    """Train/evaluate every variant over the matrix seeds; each row is the
    per-horizon median across seeds. Invalid variants are reported in the
    returned error map and skipped."""
    seeds = matrix.get("seeds", [base.seed])
    base_d = apply_overrides(base.to_dict(), matrix.get("base", {}))
    if "steps" in matrix:
        base_d["train"]["steps"] = matrix["steps"]
    report = MAEReport([float(h) for h in horizons])
    errors: dict[str, str] = {}
    x, y = stack_windows(train_w)
    zerov = None
    for name, overrides in expand_matrix(matrix):
        try:
            cfg = from_dict(apply_overrides(base_d, overrides)).validate()
            runs = []
            for s in seeds:
                cfg_s = from_dict(apply_overrides(cfg.to_dict(), {"seed": s})).validate()
                if cfg_s.encoder.input_frames != x.shape[1] or cfg_s.decoder.horizon != y.shape[1]:
                    raise ConfigError("variant changes T_h / T_f, which the shared windows fix")
                sub = None if out_dir is None else Path(out_dir) / _slug(name) / f"seed_{s}"
                res = train(cfg_s, x, y, body, out_dir=sub)
                rep = evaluate(res.model, test_w, horizons, interval)
                runs.append(rep.row(MODEL_ROW))
                zerov = rep.row(ZEROV_ROW)
                log.info("variant %s seed %s: %s", name, s, runs[-1])
            report.add(name, [statistics.median(col) for col in zip(*runs)])
        except ConfigError as e:
            errors[name] = str(e)
            log.warning("variant %s skipped: %s", name, e)
    if zerov is not None:
        report.add(ZEROV_ROW, zerov)
    return report, errors


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


# Difference orders {0} vs {0,1,2} and one scale vs three. The reference row
# (orders {0,1,2}, scales {1,2,3}) is the default model and serves both pairs.
# The step budget matches ``generalization_config`` so the ablation runs on the
# same training protocol as the held-out benchmark.
REFERENCE_ROW = "beta {0,1,2}, scales {1,2,3}"
DIRECTION_MATRIX = {
    "variants": [
        {"name": REFERENCE_ROW, "overrides": {"encoder.beta_max": 2, "encoder.scales": [1, 2, 3]}},
        {"name": "beta {0}", "overrides": {"encoder.beta_max": 0}},
        {"name": "scales {1}", "overrides": {"encoder.scales": [1]}},
    ],
    "seeds": [0, 1, 2],
    "steps": 1500,
}
