"""Body scales, joint/part maps, the difference operator and rotation utils.

Body-spec file schema (JSON)::

    {
      "name": str,
      "n_joints": int,
      "joint_names": [str, ...],                # optional
      "scales": [
        {"scale_id": 1..5,
         "name": str,                           # optional
         "groups": [[joint, ...], ...] | "identity",
         "edges": [[a, b], ...]}                # part indices, undirected
      ]
    }

Each scale's ``groups`` must partition ``range(n_joints)``; group ``k``
becomes node ``k`` of that scale.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

DEFAULT_BODY = "h36m_20.json"


@dataclass(frozen=True)
class ScaleSpec:
    scale_id: int
    n_joints: int
    groups: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int], ...] = ()
    name: str = ""

    @property
    def n_nodes(self) -> int:
        return len(self.groups)

    def validate(self) -> None:
        seen: dict[int, int] = {}
        dup = set()
        for g in self.groups:
            if not g:
                raise ValidationError(f"scale {self.scale_id}: empty group")
            for j in g:
                if j in seen:
                    dup.add(j)
                seen[j] = seen.get(j, 0) + 1
        missing = sorted(set(range(self.n_joints)) - set(seen))
        out_of_range = sorted(j for j in seen if not 0 <= j < self.n_joints)
        if dup or missing or out_of_range:
            raise ValidationError(
                f"scale {self.scale_id}: groups do not partition {self.n_joints} joints "
                f"(duplicated {sorted(dup)}, missing {missing}, out of range {out_of_range})")
        for a, b in self.edges:
            if not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise ValidationError(
                    f"scale {self.scale_id}: edge ({a}, {b}) outside node range 0..{self.n_nodes - 1}")
            if a == b:
                raise ValidationError(f"scale {self.scale_id}: self-loop edge ({a}, {b})")


@dataclass(frozen=True)
class ScaleMap:
    aggregate: np.ndarray   # [M_s, M_1], row-stochastic
    broadcast: np.ndarray   # [M_1, M_s], one 1 per row


@dataclass
class BodySpec:
    name: str
    n_joints: int
    scales: dict[int, ScaleSpec]
    joint_names: list[str] = field(default_factory=list)

    def scale(self, scale_id: int) -> ScaleSpec:
        try:
            return self.scales[scale_id]
        except KeyError:
            raise ConfigError(f"body spec {self.name!r} has no scale {scale_id} "
                              f"(available: {sorted(self.scales)})") from None

    @classmethod
    def from_dict(cls, d: dict) -> "BodySpec":
        try:
            n = int(d["n_joints"])
            scales = {}
            for s in d["scales"]:
                groups = s["groups"]
                if groups == "identity":
                    groups = [[j] for j in range(n)]
                spec = ScaleSpec(int(s["scale_id"]), n, tuple(tuple(int(j) for j in g) for g in groups),
                                 tuple((int(a), int(b)) for a, b in s.get("edges", [])), s.get("name", ""))
                spec.validate()
                scales[spec.scale_id] = spec
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"malformed body spec: {e!r}") from None
        names = list(d.get("joint_names", [])) or [f"j{j}" for j in range(n)]
        return cls(d.get("name", "body"), n, scales, names)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "n_joints": self.n_joints, "joint_names": self.joint_names,
            "scales": [{"scale_id": s.scale_id, "name": s.name, "groups": [list(g) for g in s.groups],
                        "edges": [list(e) for e in s.edges]} for s in self.scales.values()],
        }


def load_body_spec(path=None) -> BodySpec:
    """Read a body-spec JSON file; ``None`` gives the shipped 20-joint body."""
    if path is None:
        text = resources.files("dmgnn.data").joinpath(DEFAULT_BODY).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read body spec {path}: {e}") from None
    try:
        return BodySpec.from_dict(json.loads(text))
    except json.JSONDecodeError as e:
        raise ConfigError(f"body spec {path}: invalid JSON ({e})") from None


def build_scale_maps(spec: ScaleSpec) -> ScaleMap:
    spec.validate()
    agg = np.zeros((spec.n_nodes, spec.n_joints))
    bc = np.zeros((spec.n_joints, spec.n_nodes))
    for k, g in enumerate(spec.groups):
        agg[k, list(g)] = 1.0 / len(g)
        bc[list(g), k] = 1.0
    return ScaleMap(agg, bc)


def init_adjacency(spec: ScaleSpec) -> np.ndarray:
    """Symmetric 0/1 skeleton adjacency with zero diagonal."""
    spec.validate()
    a = np.zeros((spec.n_nodes, spec.n_nodes))
    for i, j in spec.edges:
        a[i, j] = a[j, i] = 1.0
    return a


# ----------------------------------------------------------------- sequences

@dataclass
class MotionSequence:
    frames: np.ndarray          # [T, M, 3] exponential maps, radians
    frame_interval: float       # ms per frame

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        f = self.frames
        if f.ndim != 3 or f.shape[2] != 3 or f.shape[0] < 1:
            raise ValidationError(f"motion sequence must be [T>=1, M, 3], got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValidationError("motion sequence contains non-finite values")
        if not self.frame_interval > 0:
            raise ValidationError(f"frame interval must be positive, got {self.frame_interval}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]


def difference_transform(frames, beta_max: int) -> np.ndarray:
    """Stack [D^0 X, ..., D^beta X] on the last axis.

    ``frames`` is ``[..., T, M, 3]`` (or a MotionSequence). D^b at a time
    index with fewer than ``b`` predecessors is zero.
    """
    if beta_max not in (0, 1, 2):
        raise ConfigError(f"beta_max must be 0, 1 or 2, got {beta_max}")
    x = frames.frames if isinstance(frames, MotionSequence) else np.asarray(frames, dtype=np.float64)
    t_axis = x.ndim - 3
    blocks = [x]
    prev = x
    for b in range(1, beta_max + 1):
        cur = np.zeros_like(x)
        hi = [slice(None)] * x.ndim
        lo = [slice(None)] * x.ndim
        hi[t_axis] = slice(b, None)
        lo[t_axis] = slice(b - 1, -1)
        cur[tuple(hi)] = prev[tuple(hi)] - prev[tuple(lo)]
        blocks.append(cur)
        prev = cur
    return np.concatenate(blocks, axis=-1)


def write_sequence_csv(path, seq: MotionSequence, joint_names=None) -> None:
    m = seq.n_joints
    names = joint_names or [f"j{j}" for j in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{names[j]}_{ax}" for j in range(m) for ax in "xyz"])
        for row in seq.frames.reshape(seq.n_frames, -1):
            w.writerow([repr(float(v)) for v in row])


def read_csv_matrix(path, has_header: bool = True) -> np.ndarray:
    """Parse a numeric CSV into ``[rows, cols]``; ragged or non-numeric rows
    raise ParseError with the offending file and line."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(rows)


def read_sequence_csv(path, frame_interval: float, has_header: bool = True) -> MotionSequence:
    mat = read_csv_matrix(path, has_header)
    if mat.shape[1] % 3:
        raise ParseError(f"{path}: column count {mat.shape[1]} is not a multiple of 3")
    return MotionSequence(mat.reshape(mat.shape[0], -1, 3), frame_interval)


# ------------------------------------------------------------------ rotations

def _skew(v: np.ndarray) -> np.ndarray:
    k = np.zeros(v.shape[:-1] + (3, 3))
    k[..., 0, 1], k[..., 0, 2] = -v[..., 2], v[..., 1]
    k[..., 1, 0], k[..., 1, 2] = v[..., 2], -v[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -v[..., 1], v[..., 0]
    return k


def expmap_to_rotmat(v) -> np.ndarray:
    """Rodrigues: R = I + sin(t)/t [v]x + (1 - cos t)/t^2 [v]x^2, t = |v|."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)[..., None, None]
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta ** 2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta ** 2 / 24.0, (1.0 - np.cos(safe)) / safe ** 2)
    k = _skew(v)
    return np.eye(3) + a * k + b * (k @ k)


def euler_zyx_to_rotmat(angles) -> np.ndarray:
    """angles = (rx, ry, rz); R = Rz(rz) @ Ry(ry) @ Rx(rx)."""
    angles = np.asarray(angles, dtype=np.float64)
    x, y, z = angles[..., 0], angles[..., 1], angles[..., 2]
    cx, sx, cy, sy, cz, sz = np.cos(x), np.sin(x), np.cos(y), np.sin(y), np.cos(z), np.sin(z)
    r = np.empty(angles.shape[:-1] + (3, 3))
    r[..., 0, 0] = cz * cy
    r[..., 0, 1] = cz * sy * sx - sz * cx
    r[..., 0, 2] = cz * sy * cx + sz * sx
    r[..., 1, 0] = sz * cy
    r[..., 1, 1] = sz * sy * sx + cz * cx
    r[..., 1, 2] = sz * sy * cx - cz * sx
    r[..., 2, 0] = -sy
    r[..., 2, 1] = cy * sx
    r[..., 2, 2] = cy * cx
    return r


def rotmat_to_euler_zyx(r) -> np.ndarray:
    """Inverse of :func:`euler_zyx_to_rotmat`. Near gimbal lock
    (|R[2,0]| >= 1 - 1e-9) the z angle is fixed to 0."""
    r = np.asarray(r, dtype=np.float64)
    r20 = r[..., 2, 0]
    lock = np.abs(r20) >= 1.0 - 1e-9
    ry = np.where(lock, -np.sign(r20) * np.pi / 2,
                  np.arctan2(-r20, np.sqrt(r[..., 0, 0] ** 2 + r[..., 1, 0] ** 2)))
    rx = np.arctan2(r[..., 2, 1], r[..., 2, 2])
    rz = np.arctan2(r[..., 1, 0], r[..., 0, 0])
    # R[2,0] = -1 -> ry = +pi/2: R[0,1:] = (sin rx, cos rx); +1 flips both signs
    s = -np.sign(r20)
    rx_lock = np.arctan2(s * r[..., 0, 1], s * r[..., 0, 2])
    rx = np.where(lock, rx_lock, rx)
    rz = np.where(lock, 0.0, rz)
    return np.stack([rx, ry, rz], axis=-1)


def expmap_to_euler(v) -> np.ndarray:
    """Expmap ``[..., 3]`` to ZYX Euler angles ``[..., 3]`` ordered (x, y, z)."""
    return rotmat_to_euler_zyx(expmap_to_rotmat(v))


def rotmat_to_expmap(r) -> np.ndarray:
    """Log map, used by tests to build expmaps of arbitrary rotations.

    Goes through a unit quaternion picked from the largest of its four
    squared components, which stays accurate right up to theta = pi where
    the arccos-of-trace route loses half the digits.
    """
    r = np.asarray(r, dtype=np.float64)
    flat = r.reshape(-1, 3, 3)
    tr = np.trace(flat, axis1=-2, axis2=-1)
    d = np.diagonal(flat, axis1=-2, axis2=-1)
    # 4 q_i^2 for (w, x, y, z)
    sq = np.stack([1 + tr, 1 + 2 * d[:, 0] - tr, 1 + 2 * d[:, 1] - tr, 1 + 2 * d[:, 2] - tr], -1)
    k = np.argmax(sq, axis=-1)
    big = np.sqrt(np.maximum(sq[np.arange(len(k)), k], 0.0))  # 2 |q_k|, at least 1
    a = flat[:, 2, 1] - flat[:, 1, 2]   # 4 w x
    b = flat[:, 0, 2] - flat[:, 2, 0]   # 4 w y
    c = flat[:, 1, 0] - flat[:, 0, 1]   # 4 w z
    e = flat[:, 0, 1] + flat[:, 1, 0]   # 4 x y
    f = flat[:, 0, 2] + flat[:, 2, 0]   # 4 x z
    g = flat[:, 1, 2] + flat[:, 2, 1]   # 4 y z
    rows = {0: (big * big, a, b, c), 1: (a, big * big, e, f), 2: (b, e, big * big, g), 3: (c, f, g, big * big)}
    q = np.zeros((len(k), 4))
    for i, comps in rows.items():
        sel = k == i
        q[sel] = np.stack([v[sel] for v in comps], -1) / (2 * big[sel, None])
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    q *= np.where(q[:, :1] < 0, -1.0, 1.0)  # w >= 0 keeps theta in [0, pi]
    v = q[:, 1:]
    sin_half = np.linalg.norm(v, axis=-1)
    theta = 2.0 * np.arctan2(sin_half, q[:, 0])
    scale = np.where(sin_half < 1e-12, 2.0, theta / np.where(sin_half < 1e-12, 1.0, sin_half))
    return (v * scale[:, None]).reshape(r.shape[:-2] + (3,))
