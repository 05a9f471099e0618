import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmgnn.dataset import (DatasetManifest, FileEntry, SynthSpec, load_dataset, load_manifest, make_windows,
                           read_predictions_csv, save_manifest, select_columns, split_windows, synth_components,
                           synth_motion, write_predictions_csv, write_synth_dataset)
from dmgnn.errors import ConfigError, DataError, ParseError
from dmgnn.skeleton import MotionSequence


def write_matrix(path, mat, header=True):
    lines = [",".join(f"c{i}" for i in range(mat.shape[1]))] if header else []
    lines += [",".join(repr(float(v)) for v in row) for row in mat]
    path.write_text("\n".join(lines) + "\n")


def make_manifest(tmp_path, files, **kw):
    d = {"root": ".", "frame_interval_ms": 20.0, "downsample": 2, "has_header": True, "columns": "nonzero",
         "train_subjects": ["S1"], "test_subjects": ["S5"],
         "actions": {"walking": [{"file": f, "subject": s} for f, s in files]}}
    d.update(kw)
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(d))
    return p


def seq_of(t, m=2, seed=0):
    return MotionSequence(np.random.default_rng(seed).normal(size=(t, m, 3)), 40.0)


# ---------------------------------------------------------------- loading

def test_downsample_100_to_50(tmp_path):
    write_matrix(tmp_path / "a.csv", np.random.default_rng(0).normal(size=(100, 6)))
    (ls,) = load_dataset(load_manifest(make_manifest(tmp_path, [("a.csv", "S1")])))
    assert ls.sequence.n_frames == 50 and ls.sequence.frame_interval == 40.0
    assert ls.split == "train" and ls.action == "walking"


def test_mask_60_of_99_columns(tmp_path):
    rng = np.random.default_rng(1)
    mat = np.zeros((10, 99))
    keep = np.sort(rng.choice(99, 60, replace=False))
    mat[:, keep] = rng.normal(size=(10, 60))
    write_matrix(tmp_path / "a.csv", mat)
    (ls,) = load_dataset(load_manifest(make_manifest(tmp_path, [("a.csv", "S1")], downsample=1)))
    assert ls.sequence.n_joints == 20
    np.testing.assert_array_equal(ls.sequence.frames.reshape(10, -1), mat[:, keep])


def test_explicit_columns_and_range(tmp_path):
    write_matrix(tmp_path / "a.csv", np.arange(24.0).reshape(4, 6))
    p = make_manifest(tmp_path, [("a.csv", "S1")], downsample=1, columns=[3, 4, 5])
    (ls,) = load_dataset(load_manifest(p))
    np.testing.assert_array_equal(ls.sequence.frames[:, 0], [[3, 4, 5], [9, 10, 11], [15, 16, 17], [21, 22, 23]])
    p = make_manifest(tmp_path, [("a.csv", "S1")], columns=[0, 1, 9])
    with pytest.raises(ConfigError):
        load_dataset(load_manifest(p))


def test_empty_file_is_parse_error(tmp_path):
    (tmp_path / "a.csv").write_text("c0,c1,c2\n")
    with pytest.raises(ParseError, match="a.csv"):
        load_dataset(load_manifest(make_manifest(tmp_path, [("a.csv", "S1")])))


def test_ragged_and_non_numeric_name_line(tmp_path):
    (tmp_path / "r.csv").write_text("a,b,c\n1,2,3\n1,2\n")
    with pytest.raises(ParseError, match=r"r\.csv:3"):
        load_dataset(load_manifest(make_manifest(tmp_path, [("r.csv", "S1")])))
    (tmp_path / "n.csv").write_text("a,b,c\n1,2,3\n1,x,3\n")
    with pytest.raises(ParseError, match=r"n\.csv:3"):
        load_dataset(load_manifest(make_manifest(tmp_path, [("n.csv", "S1")])))


def test_column_count_mismatch_between_files(tmp_path):
    write_matrix(tmp_path / "a.csv", np.ones((4, 6)))
    write_matrix(tmp_path / "b.csv", np.ones((4, 9)))
    with pytest.raises(ParseError, match="b.csv"):
        load_dataset(load_manifest(make_manifest(tmp_path, [("a.csv", "S1"), ("b.csv", "S5")])))


def test_manifest_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_manifest(tmp_path / "missing.json")
    with pytest.raises(DataError, match="gone.csv"):
        load_manifest(make_manifest(tmp_path, [("gone.csv", "S1")]))
    write_matrix(tmp_path / "a.csv", np.ones((4, 6)))
    with pytest.raises(ConfigError, match="unknown"):
        load_manifest(make_manifest(tmp_path, [("a.csv", "S1")], fps=50))


def test_manifest_save_load_roundtrip(tmp_path):
    write_matrix(tmp_path / "a.csv", np.ones((4, 6)))
    m = load_manifest(make_manifest(tmp_path, [("a.csv", "S1")], test_offsets={"walking": [[0, 3]]}))
    save_manifest(tmp_path / "copy.json", m)
    again = load_manifest(tmp_path / "copy.json")
    assert again == m


def test_masking_commutes_with_downsampling(tmp_path):
    mat = np.random.default_rng(2).normal(size=(31, 12))
    cols = [0, 1, 2, 9, 10, 11]
    np.testing.assert_array_equal(select_columns(mat[::3], cols), select_columns(mat, cols)[::3])


# ---------------------------------------------------------------- windows

@pytest.mark.parametrize("t, n", [(59, 1), (61, 3), (58, 0)])
def test_window_counts(t, n):
    assert len(make_windows(seq_of(t), 49, 10)) == n


def test_stride_5_against_loop():
    seq = seq_of(120)
    got = make_windows(seq, 49, 10, stride=5)
    expect = []
    s = 0
    while s + 59 <= 120:
        expect.append(s)
        s += 5
    assert [w.offset for w in got] == expect
    for w in got:
        np.testing.assert_array_equal(w.input, seq.frames[w.offset:w.offset + 49])


@settings(max_examples=40, deadline=None)
@given(t=st.integers(2, 40), t_h=st.integers(1, 12), t_f=st.integers(1, 6), stride=st.integers(1, 7))
def test_window_roundtrip_is_exact_slice(t, t_h, t_f, stride):
    seq = seq_of(t, m=1, seed=t)
    wins = make_windows(seq, t_h, t_f, stride)
    assert len(wins) == max(0, (t - t_h - t_f) // stride + 1)
    for w in wins:
        np.testing.assert_array_equal(np.concatenate([w.input, w.target]),
                                      seq.frames[w.offset:w.offset + t_h + t_f])


def test_bad_window_args():
    with pytest.raises(ConfigError):
        make_windows(seq_of(10), 3, 2, stride=0)


def test_split_and_offsets(tmp_path):
    rng = np.random.default_rng(3)
    write_matrix(tmp_path / "tr.csv", rng.normal(size=(140, 6)))
    write_matrix(tmp_path / "te.csv", rng.normal(size=(140, 6)))
    p = make_manifest(tmp_path, [("tr.csv", "S1"), ("te.csv", "S5")])
    m = load_manifest(p)
    train, test = split_windows(load_dataset(m), m, 49, 10)
    assert len(train) == 70 - 59 + 1 and [w.offset for w in test] == [0, 10]
    m.test_offsets = {"walking": [[1, 4], [0, 2]]}
    _, test = split_windows(load_dataset(m), m, 49, 10)
    assert [w.offset for w in test] == [4]


def test_windows_identical_across_runs(tmp_path):
    path = write_synth_dataset(tmp_path, SynthSpec(n_frames=70), 2, 1, seed=4)
    runs = []
    for _ in range(2):
        m = load_manifest(path)
        train, test = split_windows(load_dataset(m), m, 49, 10)
        runs.append(b"".join(w.input.tobytes() + w.target.tobytes() for w in train + test))
    assert runs[0] == runs[1]


# ---------------------------------------------------------------- synthetic

def test_synth_deterministic():
    spec = SynthSpec(n_frames=30)
    np.testing.assert_array_equal(synth_motion(spec, 9).frames, synth_motion(spec, 9).frames)
    assert not np.array_equal(synth_motion(spec, 9).frames, synth_motion(spec, 10).frames)


def test_zero_amplitude_is_constant():
    seq = synth_motion(SynthSpec(n_frames=25, amp_range=(0.0, 0.0), noise=0.0), 1)
    np.testing.assert_array_equal(seq.frames, np.broadcast_to(seq.frames[:1], seq.frames.shape))


def test_synth_limits():
    with pytest.raises(ConfigError):
        SynthSpec(amp_range=(0.1, 0.9)).validate()
    with pytest.raises(ConfigError):
        SynthSpec(n_sinusoids=4).validate()


def test_dominant_dft_bins_match_seeded_frequencies():
    # 0.25 Hz base and 40 ms frames: 200 frames hold exactly 2 periods, so
    # every harmonic k * f0 lands on DFT bin 2k.
    spec = SynthSpec(n_joints=3, n_frames=200, freq_range=(0.25, 0.25), noise=0.0, n_sinusoids=1)
    seq = synth_motion(spec, 5)
    comp = synth_components(spec, 5)
    spec_mag = np.abs(np.fft.rfft(seq.frames - seq.frames.mean(axis=0), axis=0))
    dt = spec.frame_interval_ms / 1000.0
    for j in range(3):
        for a in range(3):
            expect_bin = int(round(comp.freqs[j, a, 0] * spec.n_frames * dt))
            assert int(np.argmax(spec_mag[:, j, a])) == expect_bin


def test_synth_dataset_manifest(tmp_path):
    path = write_synth_dataset(tmp_path, SynthSpec(n_joints=20, n_frames=60), 3, 2)
    loaded = load_dataset(load_manifest(path))
    assert [ls.split for ls in loaded] == ["train"] * 3 + ["test"] * 2
    assert all(ls.sequence.frames.shape == (60, 20, 3) and ls.sequence.frame_interval == 40.0 for ls in loaded)


# ---------------------------------------------------------------- prediction export

def test_prediction_csv_roundtrip(tmp_path):
    preds = np.random.default_rng(0).normal(size=(3, 4, 5, 3))
    write_predictions_csv(tmp_path / "p.csv", preds, sample_ids=[10, 20, 30])
    ids, back = read_predictions_csv(tmp_path / "p.csv")
    assert ids == ["10", "20", "30"]
    np.testing.assert_array_equal(back, preds)
    header = (tmp_path / "p.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["sample", "frame", "v0"] and len(header) == 2 + 15


def test_prediction_csv_bad_header(tmp_path):
    (tmp_path / "p.csv").write_text("a,b\n")
    with pytest.raises(ParseError):
        read_predictions_csv(tmp_path / "p.csv")


def test_manifest_dataclass_split():
    m = DatasetManifest(root=".", actions={"a": [FileEntry("x", "S1")]}, train_subjects=["S1"])
    assert m.split_of("S1") == "train" and m.split_of("S9") is None
