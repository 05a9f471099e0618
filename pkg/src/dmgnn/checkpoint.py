"""Binary checkpoint format (all integers and floats little-endian).

::

    magic     8 bytes   b"DMGNNCKP"
    version   u32       FORMAT_VERSION
    config    u32 n, then n bytes of UTF-8 JSON (resolved run config)
    "PARM"    u32 count, then `count` tensor records   (named parameters)
    "BUFF"    u32 count, then `count` tensor records   (BN running stats)
    "ADAM"    u8 present; if 1:
                u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
                u32 count, then `count` records named "m/<param>" and
                `count` records named "v/<param>", in parameter order

    tensor record:
        u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims,
        prod(dims) x f64 values in row-major order

Writing is deterministic: identical state gives identical bytes.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoadError
from .optim import AdamState

MAGIC = b"DMGNNCKP"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam: AdamState | None = None
    adam_names: list[str] = field(default_factory=list)


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise LoadError("checkpoint truncated")
    return b


def _read_tensor(f) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, n).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(f, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return name, arr


def _expect(f, tag: bytes) -> None:
    got = _read_exact(f, len(tag))
    if got != tag:
        raise LoadError(f"checkpoint: expected section {tag!r}, found {got!r}")


def dumps(ckpt: Checkpoint) -> bytes:
    f = io.BytesIO()
    f.write(MAGIC)
    f.write(struct.pack("<I", FORMAT_VERSION))
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    f.write(struct.pack("<I", len(cfg)))
    f.write(cfg)
    for tag, table in ((b"PARM", ckpt.params), (b"BUFF", ckpt.buffers)):
        f.write(tag)
        f.write(struct.pack("<I", len(table)))
        for name, arr in table.items():
            _write_tensor(f, name, arr)
    f.write(b"ADAM")
    if ckpt.adam is None:
        f.write(struct.pack("<B", 0))
    else:
        a = ckpt.adam
        f.write(struct.pack("<B", 1))
        f.write(struct.pack("<Qdddd", a.step, a.lr, a.beta1, a.beta2, a.eps))
        f.write(struct.pack("<I", len(a.m)))
        for name, m in zip(ckpt.adam_names, a.m):
            _write_tensor(f, "m/" + name, m)
        for name, v in zip(ckpt.adam_names, a.v):
            _write_tensor(f, "v/" + name, v)
    return f.getvalue()


def loads(data: bytes) -> Checkpoint:
    f = io.BytesIO(data)
    if _read_exact(f, 8) != MAGIC:
        raise LoadError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    config = json.loads(_read_exact(f, n).decode("utf-8"))
    tables = []
    for tag in (b"PARM", b"BUFF"):
        _expect(f, tag)
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tables.append(dict(_read_tensor(f) for _ in range(count)))
    _expect(f, b"ADAM")
    (present,) = struct.unpack("<B", _read_exact(f, 1))
    adam, names = None, []
    if present:
        step, lr, b1, b2, eps = struct.unpack("<Qdddd", _read_exact(f, 40))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        ms = [_read_tensor(f) for _ in range(count)]
        vs = [_read_tensor(f) for _ in range(count)]
        names = [n[2:] for n, _ in ms]
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step,
                         m=[m for _, m in ms], v=[v for _, v in vs])
    return Checkpoint(config, tables[0], tables[1], adam, names)


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise LoadError(f"cannot read checkpoint {path}: {e}") from None
    return loads(data)
