"""Command-line entry point: ``rangeseg <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors;
error messages go to standard error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import load_run_config
from .datatypes import RangeImage
from .errors import ConfigError, RangeSegError
from .model import SegmentationModel
from .pointcloud_io import read_kitti_bin, read_labeled_sample, write_bin, write_colored_ply, write_labeled_sample
from .projection import load_range_image, project, save_range_image, unproject
from .render import save_png
from .synthetic import SceneConfig, generate_scene
from .trainer import evaluate, evaluate_per_sample, load_dataset, mean_of_reports, train

log = logging.getLogger("rangeseg")


class UsageError(Exception):
    """Bad combination of arguments that argparse cannot express."""


def _run_config(args):
    return load_run_config(args.config, args.overrides)


def _load_image(path: Path, grid) -> tuple[RangeImage, np.ndarray | None]:
    """Range-image and ground-truth labels (if any) from a sample, image or scan file."""
    suffix = path.suffix.lower()
    if suffix == ".npy":
        sample = read_labeled_sample(path, expected_shape=None)
        return sample.image, sample.labels
    if suffix == ".bin":
        return project(read_kitti_bin(path), grid), None
    return load_range_image(path), None


# subcommands -------------------------------------------------------------------------

def cmd_project(args) -> int:
    grid = _run_config(args).grid
    img = project(read_kitti_bin(args.scan), grid)
    save_range_image(args.output, img)
    print(img.stats)
    return 0


def cmd_synth(args) -> int:
    grid = _run_config(args).grid
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        scene = generate_scene(SceneConfig(seed=seed, grid=grid))
        name = f"synth_{seed:05d}"
        write_labeled_sample(scene.to_sample(name), out / f"{name}.npy")
        if args.scans:
            write_bin(scene.cloud, out / f"{name}.bin")
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    dataset = load_dataset(args.data)
    log_file = open(args.log, "w") if args.log else None
    try:
        def on_log(line: str) -> None:
            print(line, flush=True)
            if log_file:
                log_file.write(line + "\n")

        model, _ = train(dataset, cfg.train, cfg.extractor, cfg.unet, cfg.loss,
                         checkpoint_dir=args.checkpoint_dir, on_log=on_log)
    finally:
        if log_file:
            log_file.close()
    model.save(args.output)
    return 0


def cmd_predict(args) -> int:
    model, _ = SegmentationModel.load(args.ckpt)
    img, _ = _load_image(Path(args.sample), _run_config(args).grid)
    labels = model.predict(img)
    np.save(args.output, labels)
    counts = np.bincount(labels[labels >= 0], minlength=4)
    print(" ".join(f"{name}={int(n)}" for name, n in zip(("background", "car", "pedestrian", "cyclist"), counts)))
    return 0


def cmd_eval(args) -> int:
    model, _ = SegmentationModel.load(args.ckpt)
    dataset = load_dataset(args.data)
    if not dataset:
        raise UsageError(f"no samples in {args.data}")
    report = evaluate(model, dataset)
    print(report.table())
    if args.per_sample:
        means = mean_of_reports(evaluate_per_sample(model, dataset))
        print("per-sample mean: " + " ".join(f"{v:.3f}" for v in means[1:]))
    return 0


def cmd_export(args) -> int:
    if args.png == args.ply:
        raise UsageError("choose exactly one of --png or --ply")
    img, labels = _load_image(Path(args.sample), _run_config(args).grid)
    if args.ckpt:
        model, _ = SegmentationModel.load(args.ckpt)
        labels = model.predict(img)
    elif args.labels:
        labels = np.load(args.labels)
    if args.png:
        save_png(img, args.output, labels)
    else:
        valid = img.mask > 0
        cloud = unproject(img)
        point_labels = labels[valid] if labels is not None else np.zeros(len(cloud), np.int64)
        write_colored_ply(cloud, point_labels, args.output)
    print(f"wrote {args.output}")
    return 0


# parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rangeseg", description="LiDAR range-image segmentation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", parents=[common], help="project a raw scan to a range-image")
    p.add_argument("scan")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("synth", parents=[common], help="generate labeled synthetic scans")
    p.add_argument("-n", "--count", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scans", action="store_true", help="also write raw .bin scans")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train on a directory of samples")
    p.add_argument("--data", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--log", help="also write the training log to this file")
    p.add_argument("--checkpoint-dir", help="directory for intermediate checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="segment one sample, range-image or scan")
    p.add_argument("--ckpt", required=True)
    p.add_argument("sample")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="IoU table over a directory of samples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--per-sample", action="store_true", help="also print the mean of per-sample IoUs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", parents=[common], help="colored PNG or PLY render")
    p.add_argument("sample")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--png", action="store_true")
    p.add_argument("--ply", action="store_true")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--ckpt", help="color by this model's prediction")
    source.add_argument("--labels", help="color by a saved label map (.npy)")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"rangeseg {args.command}: {exc}", file=sys.stderr)
        return 2
    except (RangeSegError, OSError, ValueError, FloatingPointError) as exc:
        print(f"rangeseg {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
