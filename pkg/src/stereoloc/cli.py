"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
A ``--config`` JSON file, where accepted, overrides the matching flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, NumericError
from .geometry import KITTI_RIG, HeightPrior, StereoRig, monocular_task_error, stereo_pixel_error
from .synth import SceneConfig, dataset_split, generate_frames, read_frames, write_frames

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_overrides(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path}: {exc.msg}", line=exc.lineno)
    if not isinstance(data, dict):
        raise DataError(f"config file {path} must hold a JSON object")
    return data


def _load_rig(path):
    return KITTI_RIG if path is None else StereoRig.load(path)


def _parse_tail(text):
    kind, _, rng = text.partition(":")
    if kind != "uniform" or not rng:
        raise UsageError(f"--height-tail expects uniform:LO,HI, got {text!r}")
    try:
        lo, hi = (float(v) for v in rng.split(","))
    except ValueError:
        raise UsageError(f"--height-tail expects uniform:LO,HI, got {text!r}")
    return lo, hi


def _frames(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    return read_frames(path)


# -- commands ---------------------------------------------------------------------

def cmd_synth(args):
    overrides = _load_overrides(args.config)
    n_scenes = int(overrides.pop("scenes", args.scenes))
    seed = int(overrides.pop("seed", args.seed))
    val_fraction = float(overrides.pop("val_fraction", args.val_fraction))
    if n_scenes < 1 or not 0.0 < val_fraction < 1.0:
        raise UsageError("need --scenes >= 1 and --val-fraction in (0, 1)")
    scene = {"noise_px": args.noise_px, "mono_only_fraction": args.mono_only}
    if args.height_tail is not None:
        scene["height_tail"] = _parse_tail(args.height_tail)
    scene.update(overrides)
    try:
        config = SceneConfig.from_dict(scene)
    except TypeError as exc:
        raise UsageError(f"unknown scene option: {exc}")
    rig = _load_rig(args.rig)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = generate_frames(config, n_scenes, seed, rig)
    train, val = dataset_split(frames, (1.0 - val_fraction, val_fraction), seed)
    write_frames(out / "train.jsonl", train)
    write_frames(out / "val.jsonl", val)
    rig.save(out / "rig.json")
    (out / "scene_config.json").write_text(json.dumps({"scenes": n_scenes, "seed": seed,
                                                       "val_fraction": val_fraction,
                                                       **config.to_dict()}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(train)} train / {len(val)} val frames to {out}")


def cmd_train(args):
    from .training import TrainConfig, evaluation_pairs, train, training_pairs

    data = Path(args.data)
    opts = {"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr, "seed": args.seed,
            "clip_norm": args.clip_norm}
    if args.no_ism_loss:
        opts["w_ism"] = 0.0
    if args.no_ki:
        opts["ki"] = False
    if args.no_flip:
        opts["flip"] = False
    opts.update(_load_overrides(args.config))
    try:
        config = TrainConfig.from_dict(opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))
    rig = _load_rig(data / "rig.json" if (data / "rig.json").exists() else None)
    train_frames = _frames(data / "train.jsonl")
    val_frames = _frames(data / "val.jsonl") if (data / "val.jsonl").exists() else []
    tr = training_pairs(train_frames, config.seed, config.null_fraction)
    va = evaluation_pairs(val_frames)

    def progress(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:4d}  train {row['train_total']:.4f}  "
                  f"val {row.get('val_total', float('nan')):.4f}", flush=True)

    result = train(tr, va, rig, config, out_dir=args.out, progress=progress)
    print(f"checkpoint written to {Path(args.out) / 'model.ckpt'} ({len(result.log)} epochs)")


def cmd_predict(args):
    from .inference import predict_frames, write_localizations
    from .training import load_model

    network, meta = load_model(args.checkpoint)
    rule = args.rule or meta.get("selection", "ism")
    locs = predict_frames(_frames(args.frames), network, rule)
    if not all(np.isfinite(l.spherical.r) and np.isfinite(l.interval_halfwidth) for l in locs):
        raise NumericError("non-finite prediction")
    write_localizations(args.out, locs)
    print(f"wrote {len(locs)} localizations to {args.out}")


def cmd_eval(args):
    from .evaluation import baseline_localizations, evaluate, write_report
    from .inference import read_localizations

    frames = _frames(args.frames)
    out = Path(args.out)
    locs = read_localizations(args.predictions)
    write_report(evaluate(locs, frames, confidence=args.confidence), out, "metrics")
    if args.baselines:
        for name in ("b_median", "b_pose", "mono"):
            base = baseline_localizations(frames, name, prior=HeightPrior())
            write_report(evaluate(base, frames, confidence="ism"), out, f"baseline_{name}")
    print(f"reports written to {out}")


def cmd_figures(args):
    from .evaluation import (box_stats, error_points, evaluate, spread_points, write_boxplots,
                             write_points)
    from .inference import read_localizations

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rig = _load_rig(args.rig)
    prior = HeightPrior()
    z = np.arange(1.0, 60.0 + 1e-9, 0.5)
    write_points(out / "error_model.csv", ("distance_m", "stereo_pixel_error_m", "mono_task_error_m"),
                 [(float(d), float(stereo_pixel_error(d, rig)), float(monocular_task_error(d, prior)))
                  for d in z])
    if args.predictions is None:
        print(f"error-model curve written to {out}")
        return
    frames = _frames(args.frames)
    locs = read_localizations(args.predictions)
    write_points(out / "error_vs_distance.csv", ("distance_m", "abs_error_m", "difficulty"),
                 error_points(locs, frames))
    write_points(out / "spread_vs_distance.csv", ("distance_m", "b_m", "mode", "visible_right"),
                 spread_points(locs, frames))
    write_boxplots(evaluate(locs, frames), out / "boxplots.csv")
    print(f"figure data written to {out}")


def cmd_gradcheck(args):
    from .training import check_gradients

    worst = 0.0
    for seed in args.seeds:
        res = check_gradients(seed, batch=args.batch, hidden=args.hidden)
        worst = max(worst, res.max_rel_error)
        print(f"seed {seed}: max relative error {res.max_rel_error:.3e} at {res.worst_param} "
              f"({res.n_checked} entries, {res.n_kink_retries} kink retries)")
    ok = worst < args.tol
    print(("PASS" if ok else "FAIL") + f" (tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- parser -----------------------------------------------------------------------

def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="stereoloc", description="Stereo pedestrian localization from 2D keypoints.",
                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress messages")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic stereo frames", formatter_class=fmt)
    s.add_argument("--out", default="data", help="output directory")
    s.add_argument("--scenes", type=int, default=2000, help="number of frames")
    s.add_argument("--seed", type=int, default=0, help="master seed for scenes and the split")
    s.add_argument("--val-fraction", type=float, default=0.2, help="share of frames held out for validation")
    s.add_argument("--noise-px", type=float, default=1.0, help="keypoint noise std in pixels")
    s.add_argument("--mono-only", type=float, default=0.15,
                   help="probability that a person is hidden from the right camera")
    s.add_argument("--height-tail", default=None,
                   help="draw heights from uniform:LO,HI instead of the N(1.71, 0.09) m prior; "
                        "the knowledge-injection range is uniform:1.2,2.0")
    s.add_argument("--rig", default=None, help="rig JSON (default: 0.54 m baseline, 721 px focal, 1240x380)")
    s.add_argument("--config", default=None, help="JSON object overriding scene options")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the localization network", formatter_class=fmt)
    t.add_argument("--data", default="data", help="directory with train.jsonl, val.jsonl, rig.json")
    t.add_argument("--out", default="runs/model", help="directory for model.ckpt and train_log.csv")
    t.add_argument("--epochs", type=int, default=400, help="training epochs")
    t.add_argument("--batch-size", type=int, default=512, help="pairs per mini-batch")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    t.add_argument("--clip-norm", type=float, default=5.0, help="global gradient-norm clip")
    t.add_argument("--seed", type=int, default=0, help="seed for init, augmentation, dropout and shuffling")
    t.add_argument("--no-ism-loss", action="store_true",
                   help="drop the matching loss; pairs are then chosen by the tightest interval")
    t.add_argument("--no-ki", action="store_true", help="disable knowledge injection")
    t.add_argument("--no-flip", action="store_true", help="disable horizontal flip augmentation")
    t.add_argument("--quiet", action="store_true", help="suppress per-epoch progress")
    t.add_argument("--config", default=None, help="JSON object overriding training options")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="localize every left person", formatter_class=fmt)
    r.add_argument("--checkpoint", default="runs/model/model.ckpt", help="trained model")
    r.add_argument("--frames", default="data/val.jsonl", help="frame annotations JSONL")
    r.add_argument("--out", default="runs/predictions.jsonl", help="localization JSONL to write")
    r.add_argument("--rule", choices=("ism", "spread"), default=None,
                   help="pair selection rule (default: recorded in the checkpoint)")
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="metrics report for predictions", formatter_class=fmt)
    e.add_argument("--predictions", default="runs/predictions.jsonl", help="localization JSONL")
    e.add_argument("--frames", default="data/val.jsonl", help="ground-truth frames JSONL")
    e.add_argument("--out", default="runs/report", help="report directory")
    e.add_argument("--confidence", choices=("ism_inv_b", "inv_b", "ism"), default="ism_inv_b",
                   help="ranking score for the 5%% relative precision metric")
    e.add_argument("--baselines", action="store_true",
                   help="also report median-disparity, pose-similarity and height-prior baselines")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check", formatter_class=fmt)
    g.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="network and batch seeds")
    g.add_argument("--batch", type=int, default=8, help="samples in the checked batch")
    g.add_argument("--hidden", type=int, default=32, help="layer width used for the check")
    g.add_argument("--tol", type=float, default=1e-4, help="maximum relative error")
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("figures", help="CSV data for error, spread and box-plot figures",
                       formatter_class=fmt)
    f.add_argument("--predictions", default=None, help="localization JSONL (omit for the error model only)")
    f.add_argument("--frames", default="data/val.jsonl", help="ground-truth frames JSONL")
    f.add_argument("--rig", default=None, help="rig JSON for the error-model curve (default: built-in rig)")
    f.add_argument("--out", default="runs/figures", help="output directory")
    f.set_defaults(func=cmd_figures)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        code = args.func(args)
    except UsageError as exc:
        print(f"stereoloc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"stereoloc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"stereoloc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"stereoloc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
