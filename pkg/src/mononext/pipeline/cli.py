"""Command line entry point: ``mononext {split,train,predict,eval,visualize,synth}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import kitti_io
from ..errors import ConfigError, ParseError
from .config import TrainConfig, build_config, read_config_file

# CLI flag -> config key
TRAIN_FLAGS = {
    "data_root": "data_root",
    "out_dir": "out_dir",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "weight_decay": "weight_decay",
    "seed": "seed",
    "backbone": "network.backbone",
    "augment": "augment",
    "train_split": "train_split",
    "val_split": "val_split",
    "max_frames": "max_frames",
}


def _load_config(args) -> TrainConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for flag, key in TRAIN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            values[key] = str(val)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return build_config(values)


def _add_config_flags(p, train_flags=True):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--data-root", dest="data_root")
    if train_flags:
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--backbone", choices=("mobilenet_v2_like", "tiny_backbone"))
        p.add_argument("--augment", choices=("true", "false"))
        p.add_argument("--train-split", dest="train_split")
        p.add_argument("--val-split", dest="val_split")
        p.add_argument("--max-frames", dest="max_frames", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mononext", description="Monocular 3D detection on a BEV grid.")
    sub = parser.add_subparsers(dest="command", metavar="{split,train,predict,eval,visualize,synth}")

    p = sub.add_parser("split", help="inspect or create train/val frame lists")
    p.add_argument("--data-root", dest="data_root", required=True)
    p.add_argument("--image-sets", dest="image_sets", help="directory with train.txt/val.txt")
    p.add_argument("--seeded", action="store_true", help="write a new seeded split instead of reading one")
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)

    p = sub.add_parser("predict", help="write KITTI detection files for a split")
    _add_config_flags(p, train_flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--nms", help="BEV IoU for suppression, or 'off'")

    p = sub.add_parser("eval", help="score KITTI detection files against labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--calib", help="calibration directory (enables DontCare handling)")
    p.add_argument("--protocol", default="r11", type=str.upper, choices=("R11", "R40"))
    p.add_argument("--class", dest="class_name", default="Car")
    p.add_argument("--all-frames", action="store_true", help="score every label file, not just predicted frames")
    p.add_argument("--no-range", action="store_true", help="do not ignore objects outside the grid")
    p.add_argument("--kv", help="also write key=value results here")

    p = sub.add_parser("visualize", help="render ground truth and detections for frames")
    p.add_argument("--data-root", dest="data_root", required=True)
    p.add_argument("--frame", action="append", required=True)
    p.add_argument("--pred", help="directory of KITTI detection files")
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="class_name", default="Car")

    p = sub.add_parser("synth", help="write a synthetic KITTI-layout dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=0.8)
    return parser


def cmd_split(args):
    avail = kitti_io.available_frames(args.data_root)
    image_sets = Path(args.image_sets) if args.image_sets else kitti_io.dataset_dirs(args.data_root)["image_sets"]
    if args.seeded:
        split = kitti_io.seeded_split(avail, args.train_fraction, args.seed)
        kitti_io.write_split(image_sets, split)
    else:
        split = kitti_io.make_split(image_sets, avail)
    print(f"train={len(split.train)} val={len(split.val)} available={len(avail)}")
    return 0


def cmd_train(args):
    from .train import train

    cfg = _load_config(args)
    result = train(cfg)
    print(f"checkpoint={result.checkpoint}")
    if result.best_checkpoint:
        print(f"best={result.best_checkpoint}")
    return 0


def cmd_predict(args):
    from .data import split_frame_ids
    from .predict import predict

    cfg = _load_config(args)
    root = cfg.resolved_data_root()
    ids = split_frame_ids(root, args.split)
    frames = [kitti_io.load_frame(root, i) for i in ids]
    threshold = cfg.threshold if args.threshold is None else args.threshold
    nms = cfg.nms_iou
    if args.nms is not None:
        nms = None if args.nms.lower() == "off" else float(args.nms)
    results = predict(args.checkpoint, frames, threshold, nms, cfg.grid, cfg.model_config(), args.out,
                      cfg.class_names)
    print(f"frames={len(frames)} detections={sum(len(v) for v in results.values())} out={args.out}")
    return 0


def cmd_eval(args):
    from ..evaluator import evaluate, load_ground_truth, load_predictions
    from ..grid_codec import GridSpec

    preds = load_predictions(args.pred, args.class_name)
    ids = None if args.all_frames else list(preds)
    gts = load_ground_truth(args.gt, ids, args.class_name, args.calib)
    report = evaluate(preds, gts, None if args.no_range else GridSpec(), args.protocol)
    print(report.to_table())
    if args.kv:
        Path(args.kv).write_text(report.to_kv())
    return 0


def cmd_visualize(args):
    from ..evaluator import predictions_from_labels
    from .visualize import visualize

    for fid in args.frame:
        frame = kitti_io.load_frame(args.data_root, fid)
        gts = [kitti_io.label_to_box(r) for r in frame.labels if r.class_name == args.class_name]
        dets = []
        if args.pred:
            dets = predictions_from_labels(kitti_io.parse_label_file(Path(args.pred) / f"{fid}.txt"),
                                           args.class_name)
        for path in visualize(frame, dets, gts, args.out):
            print(path)
    return 0


def cmd_synth(args):
    from ..synthetic import write_dataset

    split = write_dataset(args.out, args.frames, args.seed, args.train_fraction)
    print(f"train={len(split.train)} val={len(split.val)} root={args.out}")
    return 0


COMMANDS = {
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "visualize": cmd_visualize,
    "synth": cmd_synth,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, OSError, ValueError) as exc:
        print(f"mononext {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())
