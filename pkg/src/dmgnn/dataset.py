"""Dataset manifests, windowing, synthetic periodic motion and prediction export.

A manifest is a JSON object::

    {
      "root": "data/",                  # relative to the manifest file
      "frame_interval_ms": 20.0,         # of the raw files
      "downsample": 2,
      "has_header": true,
      "columns": "nonzero",             # or an explicit column list, or null (all)
      "train_subjects": ["S1", "S5"],
      "test_subjects": ["S5x"],
      "actions": {"walking": [{"file": "w1.csv", "subject": "S1"}, ...]},
      "test_offsets": {"walking": [[0, 120], ...]}   # optional explicit clip starts
    }

``"nonzero"`` keeps every column that is non-zero somewhere across all
listed files, which is how joints without rotation data get dropped.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .skeleton import MotionSequence, read_csv_matrix, write_sequence_csv


@dataclass
class FileEntry:
    file: str
    subject: str


@dataclass
class DatasetManifest:
    root: Path
    actions: dict[str, list[FileEntry]]
    frame_interval_ms: float = 20.0
    downsample: int = 2
    has_header: bool = True
    columns: str | list[int] | None = "nonzero"
    train_subjects: list[str] = field(default_factory=list)
    test_subjects: list[str] = field(default_factory=list)
    test_offsets: dict[str, list[list[int]]] = field(default_factory=dict)

    def files(self):
        for action, entries in self.actions.items():
            for e in entries:
                yield action, e

    def split_of(self, subject: str) -> str | None:
        if subject in self.test_subjects:
            return "test"
        if subject in self.train_subjects:
            return "train"
        return None


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"manifest {path}: invalid JSON ({e})") from None
    known = {"root", "actions", "frame_interval_ms", "downsample", "has_header", "columns",
             "train_subjects", "test_subjects", "test_offsets"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"manifest {path}: unknown field(s) {sorted(extra)}")
    if "actions" not in d:
        raise ConfigError(f"manifest {path}: missing 'actions'")
    actions = {a: [FileEntry(**e) for e in entries] for a, entries in d["actions"].items()}
    m = DatasetManifest(root=(path.parent / d.get("root", ".")).resolve(), actions=actions,
                        **{k: d[k] for k in known - {"root", "actions"} if k in d})
    if m.downsample < 1:
        raise ConfigError(f"manifest {path}: downsample must be >= 1")
    if not m.frame_interval_ms > 0:
        raise ConfigError(f"manifest {path}: frame_interval_ms must be positive")
    for _, e in m.files():
        if not (m.root / e.file).is_file():
            raise DataError(f"manifest {path}: listed file {e.file} does not exist under {m.root}")
    return m


def save_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    d = {
        "root": str(Path(manifest.root).resolve()) if Path(manifest.root).is_absolute() else str(manifest.root),
        "frame_interval_ms": manifest.frame_interval_ms,
        "downsample": manifest.downsample,
        "has_header": manifest.has_header,
        "columns": manifest.columns,
        "train_subjects": manifest.train_subjects,
        "test_subjects": manifest.test_subjects,
        "actions": {a: [{"file": e.file, "subject": e.subject} for e in es]
                    for a, es in manifest.actions.items()},
    }
    if manifest.test_offsets:
        d["test_offsets"] = manifest.test_offsets
    path.write_text(json.dumps(d, indent=2) + "\n")


@dataclass
class LoadedSequence:
    action: str
    subject: str
    split: str | None
    source: str
    sequence: MotionSequence


def nonzero_columns(mats: list[np.ndarray]) -> list[int]:
    width = mats[0].shape[1]
    keep = np.zeros(width, dtype=bool)
    for m in mats:
        keep |= np.any(m != 0.0, axis=0)
    return [int(i) for i in np.flatnonzero(keep)]


def select_columns(mat: np.ndarray, columns) -> np.ndarray:
    return mat if columns is None else mat[:, columns]


def load_dataset(manifest: DatasetManifest) -> list[LoadedSequence]:
    """Parse, downsample and joint-mask every listed file, in manifest order."""
    raw = []
    width = None
    for action, e in manifest.files():
        path = manifest.root / e.file
        mat = read_csv_matrix(path, manifest.has_header)
        if width is None:
            width = mat.shape[1]
        elif mat.shape[1] != width:
            raise ParseError(f"{path}:1: expected {width} columns like the other files, found {mat.shape[1]}")
        raw.append((action, e, path, mat))
    if not raw:
        raise DataError("manifest lists no files")
    cols = manifest.columns
    if cols == "nonzero":
        cols = nonzero_columns([r[3] for r in raw])
    elif cols is not None:
        cols = [int(c) for c in cols]
        if any(not 0 <= c < width for c in cols):
            raise ConfigError(f"manifest columns out of range for {width}-column files")
    n_cols = width if cols is None else len(cols)
    if n_cols % 3:
        raise DataError(f"joint mask keeps {n_cols} columns, not a multiple of 3")
    out = []
    for action, e, path, mat in raw:
        mat = select_columns(mat[:: manifest.downsample], cols)
        seq = MotionSequence(mat.reshape(mat.shape[0], -1, 3),
                             manifest.frame_interval_ms * manifest.downsample)
        out.append(LoadedSequence(action, e.subject, manifest.split_of(e.subject), str(path), seq))
    return out


@dataclass
class WindowedSample:
    input: np.ndarray            # [T_h, M, 3]
    target: np.ndarray           # [T_f, M, 3]
    action: str = ""
    source: str = ""
    offset: int = 0              # index of the first input frame in the source


def make_windows(seq: MotionSequence, t_h: int, t_f: int, stride: int = 1, action: str = "",
                 source: str = "", offsets=None) -> list[WindowedSample]:
    """Contiguous (input, target) windows at ``stride``; a too-short sequence
    yields an empty list. ``offsets`` overrides the sliding starts."""
    if t_h < 1 or t_f < 1 or stride < 1:
        raise ConfigError(f"make_windows: need T_h, T_f, stride >= 1, got {t_h}, {t_f}, {stride}")
    f = seq.frames
    span = t_h + t_f
    starts = range(0, f.shape[0] - span + 1, stride) if offsets is None else offsets
    out = []
    for s in starts:
        if s < 0 or s + span > f.shape[0]:
            continue
        out.append(WindowedSample(f[s:s + t_h].copy(), f[s + t_h:s + span].copy(), action, source, s))
    return out


def stack_windows(samples: list[WindowedSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise DataError("no windows to stack")
    return (np.stack([s.input for s in samples]), np.stack([s.target for s in samples]))


def split_windows(loaded: list[LoadedSequence], manifest: DatasetManifest | None, t_h: int, t_f: int,
                  train_stride: int = 1, test_stride: int | None = None):
    """Train windows (stride ``train_stride``) and test windows (stride
    ``test_stride``, default ``t_f``), each in file order."""
    test_stride = t_f if test_stride is None else test_stride
    train, test = [], []
    for ls in loaded:
        if ls.split == "train":
            train += make_windows(ls.sequence, t_h, t_f, train_stride, ls.action, ls.source)
        elif ls.split == "test":
            offsets = None
            if manifest is not None and ls.action in manifest.test_offsets:
                offsets = [o for src, o in _offsets_for(manifest, ls)]
            test += make_windows(ls.sequence, t_h, t_f, test_stride, ls.action, ls.source, offsets)
    return train, test


def _offsets_for(manifest: DatasetManifest, ls: LoadedSequence):
    for pair in manifest.test_offsets.get(ls.action, []):
        idx, off = pair
        entries = manifest.actions[ls.action]
        if 0 <= idx < len(entries) and str(manifest.root / entries[idx].file) == ls.source:
            yield idx, off


# ------------------------------------------------------------------ synthetic motion

@dataclass
class SynthSpec:
    n_joints: int = 20
    n_frames: int = 120
    n_sinusoids: int = 3              # per channel, at most 3
    freq_range: tuple[float, float] = (0.25, 1.0)      # Hz, base frequency when harmonic
    amp_range: tuple[float, float] = (0.05, 0.3)       # rad, per sinusoid
    offset_range: tuple[float, float] = (-0.5, 0.5)
    noise: float = 0.002
    frame_interval_ms: float = 40.0
    harmonic: bool = True             # frequencies are k * f0 with one f0 per sequence

    def validate(self) -> None:
        if not 0 <= self.n_sinusoids <= 3:
            raise ConfigError(f"synth: n_sinusoids must be in 0..3, got {self.n_sinusoids}")
        lo, hi = self.amp_range
        if not 0 <= lo <= hi <= 0.8:
            raise ConfigError(f"synth: amp_range must satisfy 0 <= lo <= hi <= 0.8, got {self.amp_range}")
        if not 0 < self.freq_range[0] <= self.freq_range[1]:
            raise ConfigError(f"synth: bad freq_range {self.freq_range}")
        if self.n_joints < 1 or self.n_frames < 1 or self.noise < 0 or self.frame_interval_ms <= 0:
            raise ConfigError("synth: n_joints, n_frames, frame_interval_ms must be positive, noise >= 0")


@dataclass
class SynthComponents:
    freqs: np.ndarray       # [M, 3, K] Hz
    amps: np.ndarray        # [M, 3, K]
    phases: np.ndarray      # [M, 3, K]
    offsets: np.ndarray     # [M, 3]


def synth_components(spec: SynthSpec, seed: int) -> SynthComponents:
    spec.validate()
    rng = np.random.default_rng(seed)
    m, k = spec.n_joints, spec.n_sinusoids
    if spec.harmonic:
        f0 = rng.uniform(*spec.freq_range)
        mult = rng.integers(1, 4, size=(m, 3, k))
        freqs = f0 * mult
    else:
        freqs = rng.uniform(*spec.freq_range, size=(m, 3, k))
    amps = rng.uniform(*spec.amp_range, size=(m, 3, k))
    phases = rng.uniform(0, 2 * np.pi, size=(m, 3, k))
    offsets = rng.uniform(*spec.offset_range, size=(m, 3))
    return SynthComponents(freqs, amps, phases, offsets)


def synth_motion(spec: SynthSpec, seed: int) -> MotionSequence:
    """Each joint-axis channel is an offset plus at most three seeded
    sinusoids plus Gaussian noise of std ``spec.noise``."""
    comp = synth_components(spec, seed)
    t = np.arange(spec.n_frames)[:, None, None, None] * (spec.frame_interval_ms / 1000.0)
    wave = comp.amps * np.sin(2 * np.pi * comp.freqs * t + comp.phases)
    frames = comp.offsets + wave.sum(axis=-1)
    if spec.noise > 0:
        frames = frames + np.random.default_rng([seed, 1]).normal(0.0, spec.noise, frames.shape)
    return MotionSequence(frames, spec.frame_interval_ms)


def write_synth_dataset(out_dir, spec: SynthSpec, n_train: int, n_test: int, seed: int = 0,
                        action: str = "synthetic") -> Path:
    """Write CSVs plus a manifest (no downsampling, all columns) and return
    the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(n_train + n_test)
    entries = []
    for i, s in enumerate(seeds):
        name = f"seq_{i:04d}.csv"
        write_sequence_csv(out / name, synth_motion(spec, int(s)))
        entries.append(FileEntry(name, "train" if i < n_train else "test"))
    man = DatasetManifest(root=Path("."), actions={action: entries}, frame_interval_ms=spec.frame_interval_ms,
                          downsample=1, has_header=True, columns=None,
                          train_subjects=["train"], test_subjects=["test"])
    path = out / "manifest.json"
    save_manifest(path, man)
    return path


# ------------------------------------------------------------------ prediction export

def write_predictions_csv(path, preds: np.ndarray, sample_ids=None) -> None:
    """One row per predicted frame: ``sample, frame, v0 .. v{3M-1}``."""
    preds = np.asarray(preds)
    n, t = preds.shape[:2]
    ids = list(range(n)) if sample_ids is None else list(sample_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "frame"] + [f"v{i}" for i in range(int(np.prod(preds.shape[2:])))])
        for i in range(n):
            for k in range(t):
                w.writerow([ids[i], k + 1] + [repr(float(v)) for v in preds[i, k].ravel()])


def read_predictions_csv(path) -> tuple[list[str], np.ndarray]:
    """Inverse of :func:`write_predictions_csv`: ids and ``[N, T_f, M, 3]``."""
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[:2] != ["sample", "frame"]:
            raise ParseError(f"{path}:1: expected 'sample,frame,...' header")
        for lineno, row in enumerate(r, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} columns, found {len(row)}")
            try:
                rows.setdefault(row[0], []).append([float(v) for v in row[2:]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell") from None
    ids = list(rows)
    arr = np.asarray([rows[i] for i in ids])
    return ids, arr.reshape(arr.shape[0], arr.shape[1], -1, 3)
