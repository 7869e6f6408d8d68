"""Command-line front end: synth, train, infer and eval subcommands.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .density import InsufficientDataError
from .errors import ConfigError, DataError, NumericalError
from .io import load_dataset, load_model, read_predictions, save_model, write_dataset, write_predictions
from .localclf import UnknownCategoryError
from .pipeline import (FUSIONS, MODES, RunConfig, build_report, infer, predicted_scenes, report_json,
                       report_table, train)
from .plotting import render_report_figures
from .synth import PlantedRule, generate_scenes

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
SPLITS = ("train", "val", "test")


def _common(defaults=True):
    """Shared run flags; with ``defaults=False`` unset flags stay None."""
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--format", choices=("rf1", "rf2"), default=d("rf1"), help="relation format")
    p.add_argument("--mode", choices=MODES, default=d("aggressive"), help="wvRN inference mode")
    p.add_argument("--fusion", choices=FUSIONS, default=d("none"), help="how local and contextual responses combine")
    p.add_argument("--k", type=int, default=d(8), help="number of viewpoint bins")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for matching")
    p.add_argument("--angle-field", choices=("alpha", "rot_y"), default=d("alpha"),
                   help="KITTI angle column defining the viewpoint")
    p.add_argument("--oracle", action="store_true", help="classify annotations using annotations as context")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="processes for scene-level parallelism")
    p.add_argument("--min-samples", type=int, default=5, help="fewest samples for a fitted density")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="ctxview", description="Contextual viewpoint classification")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a planted-rule synthetic dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--scenes", type=int, default=300, help="total scenes, split chronologically in thirds")
    s.add_argument("--counts", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"),
                   help="explicit scene counts per split (overrides --scenes)")
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--layout", choices=("lanes", "perspective"), default="lanes")
    s.add_argument("--sigma", type=float, default=1.0, help="box jitter of detections, pixels")
    s.add_argument("--rho", type=float, default=0.0, help="probability a detection's bin is corrupted")
    s.add_argument("--fp-rate", type=float, default=0.0, help="expected false detections per scene")
    s.add_argument("--independent", action="store_true", help="draw viewpoints ignoring the lanes")
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", parents=[_common()], help="fit context, score and fusion models")
    t.add_argument("--data", help="dataset directory holding train/ and val/")
    t.add_argument("--train", help="training split directory (overrides --data)")
    t.add_argument("--val", help="validation split directory (overrides --data)")
    t.add_argument("--bundle", required=True, help="output model bundle directory")

    i = sub.add_parser("infer", parents=[_common(defaults=False)], help="predict viewpoints")
    i.add_argument("--bundle", required=True)
    i.add_argument("--data", required=True, help="split directory with labels/ and detections.csv")
    i.add_argument("--out", required=True, help="predictions file")

    e = sub.add_parser("eval", parents=[_common()], help="score predictions against labels")
    e.add_argument("--data", required=True, help="split directory with labels/")
    e.add_argument("--predictions", required=True)
    e.add_argument("--report-dir", required=True)
    e.add_argument("--split-threshold", type=int, help="objects per image separating low from high")
    return parser


def _config(args, **overrides):
    kw = dict(fmt=args.format, mode=args.mode, fusion=args.fusion, K=args.k, iou_threshold=args.iou,
              angle_field=args.angle_field, seed=args.seed, oracle=args.oracle, workers=args.workers,
              min_samples=args.min_samples)
    kw.update(overrides)
    return RunConfig(**kw)


def cmd_synth(args):
    if args.layout == "perspective" and args.k != 4:
        raise ConfigError("the perspective layout has 4 bins; use --k 4")
    noise = dict(sigma=args.sigma, rho=args.rho, fp_rate=args.fp_rate, independent=args.independent)
    try:
        if args.layout == "perspective":
            rule = PlantedRule.perspective(**noise)
        else:
            rule = PlantedRule.with_bins(args.k, **noise)
        splits = generate_scenes(rule, args.counts if args.counts else args.scenes, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    for name, scenes in zip(SPLITS, splits):
        write_dataset(out / name, scenes, rule.K)
    print(f"wrote {' / '.join(str(len(s)) for s in splits)} train/val/test scenes to {out}")


def cmd_train(args):
    config = _config(args)
    train_dir = args.train or (args.data and Path(args.data) / "train")
    val_dir = args.val or (args.data and Path(args.data) / "val")
    if not train_dir:
        raise ConfigError("give --data or --train")
    train_scenes = load_dataset(train_dir, config.K, config.angle_field)
    val_scenes = load_dataset(val_dir, config.K, config.angle_field) if val_dir else []
    if config.fusion != "none" and not val_scenes:
        raise ConfigError("fusion training needs a validation split (--val or --data)")
    bundle = train(train_scenes, val_scenes, config)
    save_model(args.bundle, bundle)
    print(f"wrote bundle {args.bundle} ({config.fmt.name}, K={config.K}, fusion={config.fusion})")


def cmd_infer(args):
    bundle = load_model(args.bundle)
    if args.k is not None and args.k != bundle.K:
        raise ConfigError(f"bundle was trained with K={bundle.K}, --k asks for {args.k}")
    saved = bundle.settings
    if args.format is not None and args.format.upper() != bundle.relational.fmt.name:
        raise ConfigError(f"bundle uses format {bundle.relational.fmt.name}, --format asks for {args.format}")
    fusion = args.fusion if args.fusion is not None else saved.get("fusion", "none")
    if fusion != "none" and (bundle.fusion is None or fusion != saved.get("fusion")):
        raise ConfigError(f"bundle holds no {fusion} fusion model")
    config = _config(
        args, fmt=bundle.relational.fmt, K=bundle.K, fusion=fusion,
        mode=args.mode or saved.get("mode", "aggressive"),
        angle_field=args.angle_field or saved.get("angle_field", "alpha"),
        oracle=args.oracle or bool(saved.get("oracle", False)),
    )
    scenes = load_dataset(args.data, config.K, config.angle_field)
    records = infer(scenes, bundle, config)
    write_predictions(args.out, records)
    print(f"wrote {len(records)} predictions for {len(scenes)} images to {args.out}")


def cmd_eval(args):
    config = _config(args)
    labels = load_dataset(args.data, config.K, config.angle_field)
    scenes = predicted_scenes(labels, read_predictions(args.predictions), config.oracle)
    for s in scenes:
        for h in s.hypotheses:
            if h.viewpoint >= config.K:
                raise DataError(f"{s.image_id}: predicted bin {h.viewpoint} outside [0, {config.K})")
    report = build_report(scenes, config, args.split_threshold)
    out = Path(args.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    report["figures"] = render_report_figures(report, out)
    (out / "report.json").write_text(report_json(report))
    table = report_table(report)
    (out / "report.txt").write_text(table)
    sys.stdout.write(table)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, InsufficientDataError, UnknownCategoryError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
