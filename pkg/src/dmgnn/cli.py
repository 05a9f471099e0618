"""``dmgnn`` command line: train, eval, predict, synth, bench, ablate.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
Any config field can also be set through ``DMGNN_<SECTION>__<FIELD>``
environment variables (e.g. ``DMGNN_TRAIN__LR=3e-4``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .dataset import (SynthSpec, load_dataset, load_manifest, split_windows, stack_windows,
                      write_predictions_csv, write_synth_dataset)
from .errors import ConfigError, DataError, DMGNNError
from .evaluation import bench_inference
from .experiments import run_ablation
from .model import predict
from .skeleton import load_body_spec, read_sequence_csv
from .training import evaluate, load_model, train

log = logging.getLogger("dmgnn")

_D = RunConfig()


def _horizons(text: str) -> list[float]:
    try:
        return [float(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--horizons expects comma-separated milliseconds, got {text!r}")


def _run_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["train.steps"] = args.steps
    if getattr(args, "manifest", None) is not None:
        overrides["data.manifest"] = str(args.manifest)
    return load_config(args.config, overrides)


def _windows(cfg: RunConfig, manifest_path=None):
    path = manifest_path or cfg.data.manifest
    if not path:
        raise ConfigError("data.manifest: no dataset manifest given (use --manifest)")
    manifest = load_manifest(path)
    loaded = load_dataset(manifest)
    train_w, test_w = split_windows(loaded, manifest, cfg.encoder.input_frames, cfg.decoder.horizon,
                                    cfg.train.train_stride, cfg.train.test_stride)
    interval = loaded[0].sequence.frame_interval
    return train_w, test_w, interval


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_w, _, _ = _windows(cfg)
    if not train_w:
        raise DataError("manifest yields no training windows (sequences shorter than T_h + T_f?)")
    x, y = stack_windows(train_w)
    body = load_body_spec(cfg.data.body_spec)
    res = train(cfg, x, y, body, out_dir=args.out)
    print(f"trained {len(res.losses)} steps on {len(x)} windows; final loss {res.losses[-1]:.6f}"
          if res.losses else "trained 0 steps")
    print(f"wrote {Path(args.out) / 'checkpoint.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    cfg = model.cfg
    horizons = args.horizons or cfg.data.horizons_ms
    _, test_w, interval = _windows(cfg, args.manifest)
    if not test_w:
        raise DataError("manifest yields no test windows")
    report = evaluate(model, test_w, horizons, interval)
    print(report.to_text(), end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.save(args.out)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    cfg = model.cfg
    seq = read_sequence_csv(args.input, args.frame_interval)
    t_h = cfg.encoder.input_frames
    if seq.n_frames < t_h:
        raise DataError(f"{args.input}: {seq.n_frames} frames, need at least T_h = {t_h}")
    stride = args.stride
    starts = [seq.n_frames - t_h] if stride is None else list(range(0, seq.n_frames - t_h + 1, stride))
    windows = np.stack([seq.frames[s:s + t_h] for s in starts])
    preds = predict(model, windows, horizon=args.horizon or cfg.decoder.horizon)
    write_predictions_csv(args.out, preds, sample_ids=starts)
    print(f"wrote {len(starts)} x {preds.shape[1]} predicted frames to {args.out}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.spec:
        try:
            spec = SynthSpec(**json.loads(Path(args.spec).read_text()))
        except (OSError, TypeError, json.JSONDecodeError) as e:
            raise ConfigError(f"synth spec {args.spec}: {e}") from None
    if args.frames is not None:
        spec.n_frames = args.frames
    spec.validate()
    path = write_synth_dataset(args.out, spec, args.n_train, args.n_test, seed=args.seed or 0)
    print(f"wrote {args.n_train + args.n_test} sequences and {path}")
    return 0


def cmd_bench(args) -> int:
    if args.checkpoint:
        model = load_model(args.checkpoint)
    else:
        from .model import DMGNN
        cfg = _run_config(args)
        model = DMGNN(cfg, load_body_spec(cfg.data.body_spec))
    cfg = model.cfg
    m = model.body.scale(1).n_joints
    batch = np.random.default_rng(0).normal(0.0, 0.3, (args.batch, cfg.encoder.input_frames, m, 3))
    rep = bench_inference(model, batch, args.horizon or cfg.decoder.horizon, args.repetitions, args.warmup)
    print(f"batch {rep.batch_size}, {rep.horizon_frames} frames: mean {rep.mean_ms:.2f} ms, "
          f"median {rep.median_ms:.2f} ms over {rep.repetitions} runs ({rep.n_params} params)")
    if args.out:
        Path(args.out).write_text(rep.to_json())
    return 0


# ------------------------------------------------------------------ ablation

def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    try:
        matrix = json.loads(Path(args.matrix).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"ablation matrix {args.matrix}: {e}") from None
    train_w, test_w, interval = _windows(cfg)
    horizons = args.horizons or cfg.data.horizons_ms
    report, errors = run_ablation(cfg, matrix, train_w, test_w, interval, horizons, args.out)
    print(report.to_text(), end="")
    for name, msg in errors.items():
        print(f"{name}: invalid variant ({msg})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "ablation")
        (out / "errors.json").write_text(json.dumps(errors, indent=2) + "\n")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    e, d, t = _D.encoder, _D.decoder, _D.train
    p = argparse.ArgumentParser(
        prog="dmgnn",
        description="Multiscale graph motion prediction.",
        epilog=(f"Defaults: lr {t.lr}, batch {t.batch_size}, global clip norm {t.clip_norm}, "
                f"{e.n_mgcu} MGCUs with channels {e.channels}, CS-FBs after MGCUs {e.csfb_positions}, "
                f"lambda {e.lam}, difference orders 0..{e.beta_max}, T_h {e.input_frames}, "
                f"T_f {d.horizon}, evaluation at 80/160/320/400 ms. "
                "Environment overrides: DMGNN_<SECTION>__<FIELD>=<json>."),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", type=Path, help="JSON run config (unset fields keep their defaults)")
        sp.add_argument("--manifest", type=Path, help="dataset manifest JSON")
        sp.add_argument("--seed", type=int, help=f"random seed (default {_D.seed})")
        sp.add_argument("--out", type=Path, help=out_help)

    sp = sub.add_parser("train", help="train a model and write checkpoints and a loss log")
    common(sp)
    sp.add_argument("--steps", type=int, help=f"optimizer steps (default {t.steps})")
    sp.set_defaults(func=cmd_train, need_out=True)

    sp = sub.add_parser("eval", help="MAE table of a checkpoint, with the ZeroV row")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--manifest", type=Path, help="dataset manifest (default: the one in the checkpoint config)")
    sp.add_argument("--horizons", type=_horizons, help="comma-separated ms (default 80,160,320,400)")
    sp.add_argument("--out", type=Path, help="report stem; writes <stem>.txt and <stem>.csv")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="predict future frames from a sequence CSV")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--input", type=Path, required=True, help="expmap sequence CSV with a header row")
    sp.add_argument("--frame-interval", type=float, default=40.0, help="ms per frame of the input")
    sp.add_argument("--stride", type=int, help="predict from every window at this stride (default: last window only)")
    sp.add_argument("--horizon", type=int, help="frames to predict (default: decoder.horizon)")
    sp.add_argument("--out", type=Path, required=True, help="prediction CSV")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("synth", help="write a synthetic periodic-motion dataset and manifest")
    sp.add_argument("--spec", type=Path, help="JSON generator spec (SynthSpec fields)")
    sp.add_argument("--n-train", type=int, default=200)
    sp.add_argument("--n-test", type=int, default=50)
    sp.add_argument("--frames", type=int, help="frames per sequence")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("bench", help="time encode + decode on random input")
    sp.add_argument("--checkpoint", type=Path, help="checkpoint to time (default: fresh model from --config)")
    sp.add_argument("--config", type=Path)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--horizon", type=int, help="decoded frames (default: decoder.horizon)")
    sp.add_argument("--repetitions", type=int, default=10)
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--out", type=Path, help="JSON report path")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("ablate", help="train and evaluate a matrix of config variants")
    common(sp, "directory for per-variant runs and the ablation table")
    sp.add_argument("--matrix", type=Path, required=True, help="JSON: base, sweeps, variants, seeds, steps")
    sp.add_argument("--steps", type=int, help="optimizer steps per variant")
    sp.add_argument("--horizons", type=_horizons, help="comma-separated ms")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "need_out", False) and args.out is None:
        print("error: --out is required", file=sys.stderr)
        return ConfigError.exit_code
    try:
        return args.func(args)
    except DMGNNError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
