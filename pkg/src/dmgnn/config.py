"""Run configuration: nested dataclasses serialised as JSON.

Environment overrides use the prefix ``DMGNN_`` and ``__`` as the nesting
separator, e.g. ``DMGNN_TRAIN__LR=3e-4`` or ``DMGNN_ENCODER__LAM=0.2``.
Values are parsed as JSON when possible, otherwise taken as strings.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

ENV_PREFIX = "DMGNN_"


@dataclass
class EncoderConfig:
    scales: list[int] = field(default_factory=lambda: [1, 2, 3])
    n_mgcu: int = 4
    channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    strides: list[int] | None = None          # None -> [1, 2, 2, ...]
    csfb_positions: list[int] = field(default_factory=lambda: [1, 2])
    lam: float = 0.6
    beta_max: int = 2
    freeze_adjacency: bool = False
    input_frames: int = 49
    kernel_size: int = 5
    dropout: float = 0.1
    bn_momentum: float = 0.1
    csfb_hidden: int = 256
    csfb_stride: int = 2
    csfb_bidirectional: bool = True
    csfb_softmax: str = "source"              # normalise over source nodes (rows)

    def resolved_strides(self) -> list[int]:
        if self.strides is not None:
            return list(self.strides)
        return [1] + [2] * (self.n_mgcu - 1)

    def validate(self) -> None:
        if not self.scales or self.scales[0] != 1 or len(set(self.scales)) != len(self.scales):
            raise ConfigError("encoder.scales: must be distinct ids starting with 1")
        if any(s not in (1, 2, 3, 4, 5) for s in self.scales):
            raise ConfigError(f"encoder.scales: ids must lie in 1..5, got {self.scales}")
        if not 1 <= self.n_mgcu <= 6:
            raise ConfigError(f"encoder.n_mgcu: must be in 1..6, got {self.n_mgcu}")
        if len(self.channels) != self.n_mgcu:
            raise ConfigError(f"encoder.channels: length {len(self.channels)} != n_mgcu {self.n_mgcu}")
        if len(self.resolved_strides()) != self.n_mgcu or any(s not in (1, 2) for s in self.resolved_strides()):
            raise ConfigError("encoder.strides: need one stride in {1, 2} per MGCU")
        bad = [p for p in self.csfb_positions if not 1 <= p <= self.n_mgcu]
        if bad:
            raise ConfigError(f"encoder.csfb_positions: {bad} outside 1..{self.n_mgcu}")
        if self.lam < 0:
            raise ConfigError(f"encoder.lam: must be non-negative, got {self.lam}")
        if self.beta_max not in (0, 1, 2):
            raise ConfigError(f"encoder.beta_max: must be 0, 1 or 2, got {self.beta_max}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"encoder.dropout: must be in [0, 1), got {self.dropout}")
        if self.csfb_softmax not in ("source", "target"):
            raise ConfigError("encoder.csfb_softmax: 'source' or 'target'")
        if self.input_frames < 1 or self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("encoder.input_frames / kernel_size: need T_h >= 1 and an odd kernel")


@dataclass
class DecoderConfig:
    horizon: int = 10
    hidden: int = 256
    head_hidden: int = 256
    plain_gru: bool = False
    teacher_forcing: float = 0.0

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError(f"decoder.horizon: must be >= 1, got {self.horizon}")
        if self.hidden < 1 or self.head_hidden < 1:
            raise ConfigError("decoder.hidden / head_hidden: must be positive")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ConfigError("decoder.teacher_forcing: must be in [0, 1]")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    clip_norm: float = 0.5
    steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_stride: int = 1
    test_stride: int | None = None             # None -> decoder.horizon
    log_every: int = 10
    checkpoint_every: int = 0                  # 0 -> only the final checkpoint
    lr_schedule: str = "constant"              # or "cosine" (decays to 0 over `steps`)

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"train.lr: must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.steps < 0 or self.train_stride < 1:
            raise ConfigError("train.batch_size / steps / train_stride: out of range")
        if self.clip_norm <= 0:
            raise ConfigError(f"train.clip_norm: must be positive, got {self.clip_norm}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"train.lr_schedule: 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise ConfigError("train.checkpoint_every must be >= 0 and train.log_every >= 1")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "cosine" and self.steps > 0:
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / self.steps))
        return self.lr


@dataclass
class DataConfig:
    manifest: str | None = None
    body_spec: str | None = None               # None -> shipped 20-joint body
    horizons_ms: list[float] = field(default_factory=lambda: [80, 160, 320, 400])


@dataclass
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        self.encoder.validate()
        self.decoder.validate()
        self.train.validate()
        if self.decoder.hidden != self.encoder.channels[-1]:
            raise ConfigError(
                f"decoder.hidden ({self.decoder.hidden}) must equal the last encoder channel "
                f"width ({self.encoder.channels[-1]})")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved(self) -> "RunConfig":
        """Copy with derived defaults written out explicitly."""
        d = self.to_dict()
        d["encoder"]["strides"] = self.encoder.resolved_strides()
        if d["train"]["test_stride"] is None:
            d["train"]["test_stride"] = self.decoder.horizon
        return from_dict(d)

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown config field")
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{path + '.' if path else ''}{key}") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


_NESTED = {
    (RunConfig, "encoder"): EncoderConfig,
    (RunConfig, "decoder"): DecoderConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "data"): DataConfig,
}


def from_dict(d: dict) -> RunConfig:
    return _build(RunConfig, d, "")


def set_field(d: dict, dotted: str, value) -> None:
    """Set ``encoder.lam``-style dotted keys inside a nested dict."""
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if k not in cur or not isinstance(cur[k], dict):
            raise ConfigError(f"{dotted}: unknown config field")
        cur = cur[k]
    if keys[-1] not in cur:
        raise ConfigError(f"{dotted}: unknown config field")
    cur[keys[-1]] = value


def apply_overrides(d: dict, overrides: dict) -> dict:
    d = json.loads(json.dumps(d))
    for k, v in overrides.items():
        set_field(d, k, v)
    return d


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        dotted = key[len(ENV_PREFIX):].lower().replace("__", ".")
        try:
            out[dotted] = json.loads(raw)
        except json.JSONDecodeError:
            out[dotted] = raw
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    d = RunConfig().to_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path}: invalid JSON ({e})") from None
        from_dict(user)  # reject unknown fields with their full path
        d = _deep_merge(d, user)
    d = apply_overrides(d, env_overrides(environ))
    if overrides:
        d = apply_overrides(d, overrides)
    return from_dict(d).validate()


def _deep_merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        out[k] = _deep_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def reduced_config(**overrides) -> RunConfig:
    """The desk-scale model used by the experiment scripts: channels
    8/16/32/64, hidden 64."""
    d = RunConfig().to_dict()
    d["encoder"].update(channels=[8, 16, 32, 64], csfb_hidden=64)
    d["decoder"].update(hidden=64, head_hidden=64)
    return from_dict(apply_overrides(d, overrides)).validate()
