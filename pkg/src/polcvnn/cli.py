"""Command line entry point: ``polcvnn {synth,train,classify,eval,sweep,rerun}``.

Exit status is 0 on success, 1 on a runtime or data error and 2 on a usage
error. Every command writes ``manifest.json`` (or ``<out>.manifest.json``
for single-file outputs) holding the fully resolved arguments; ``polcvnn
rerun MANIFEST`` replays it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import (classify_image, compute_metrics, median_filter_classmap,
                       metrics_from_confusion, confusion_matrix, predict_patches,
                       ratio_sweep, sweep_csv, window_sweep)
from .model import ModelConfig, build
from .polsar_io import (default_palette, load_checkpoint, read_label_map, read_t3_directory,
                        render_class_map, render_pauli_rgb, save_checkpoint, write_label_map,
                        write_t3_directory)
from .preprocess import build_dataset, extract_patches, normalize_channels, stratified_split
from .synth import LAYOUTS, generate_scene, separated_classes
from .train import TrainConfig, fit

log = logging.getLogger("polcvnn")


class UsageError(Exception):
    """Bad argument combination detected after parsing."""


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a non-negative 64-bit integer")
    return value


def _ratio(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("ratio must lie in (0, 1)")
    return value


def _window(text):
    value = int(text)
    if value < 3 or value % 2 == 0:
        raise argparse.ArgumentTypeError("window must be odd and >= 3")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _branches(text):
    names = [t.strip() for t in text.split(",") if t.strip()]
    if not names:
        raise argparse.ArgumentTypeError("at least one branch required")
    try:
        return ModelConfig(branches=tuple(names), attention_placement="none").branches
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_train_flags(p, require_io=True):
    p.add_argument("--t3", required=require_io, help="T3 coherency directory")
    p.add_argument("--labels", required=require_io, help="PLBL reference label file")
    p.add_argument("--ratio", type=_ratio, default=0.01)
    p.add_argument("--window", type=_window, default=13)
    p.add_argument("--branches", type=_branches, default=("shallow", "medium", "deep"))
    p.add_argument("--attention", choices=("none", "before", "after"), default="after")
    p.add_argument("--se-reduction", type=_positive, default=4)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=_positive, default=64)
    p.add_argument("--epochs", type=_positive, default=250)
    p.add_argument("--patience", type=_positive, default=10)
    p.add_argument("--validation-fraction", type=_ratio, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polcvnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic Wishart scene")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=_positive, default=3)
    p.add_argument("--layout", choices=LAYOUTS, default="stripes")
    p.add_argument("--size", type=_size, default=(64, 64))
    p.add_argument("--looks", type=_positive, default=4)
    p.add_argument("--seed", type=_seed, default=0)

    p = sub.add_parser("train", help="train a classifier")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-test", action="store_true",
                   help="also score the held-out test pixels")

    p = sub.add_parser("classify", help="label every pixel of a scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t3", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--median-filter", action="store_true")
    p.add_argument("--batch", type=_positive, default=256)

    p = sub.add_parser("eval", help="score a predicted map against a reference map")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="repeat training over window sizes or ratios")
    p.add_argument("--mode", choices=("window", "ratio"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--trials", type=_positive, default=1)
    p.add_argument("--out", required=True, help="CSV output file")
    _add_train_flags(p)

    p = sub.add_parser("rerun", help="replay a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="override the output location")
    return parser


# --- helpers ------------------------------------------------------------------

def _manifest(args, inputs):
    resolved = {k: v for k, v in vars(args).items() if k not in ("verbose", "handler")}
    for k, v in resolved.items():
        if isinstance(v, tuple):
            resolved[k] = list(v)
    return {"tool": "polcvnn", "version": __version__, "command": args.command,
            "seed": resolved.get("seed"), "inputs": inputs, "args": resolved}


def _write_manifest(path, args, inputs, extra=None):
    data = _manifest(args, inputs)
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _configs(args, num_classes):
    model_config = ModelConfig(window=args.window, num_classes=num_classes,
                               branches=tuple(args.branches),
                               attention_placement=args.attention,
                               se_reduction=args.se_reduction)
    train_config = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                               max_epochs=args.epochs, patience=args.patience,
                               seed=args.seed, validation_fraction=args.validation_fraction)
    return model_config, train_config


def _check_train_args(args):
    try:
        ModelConfig(window=args.window, num_classes=2, branches=tuple(args.branches),
                    attention_placement=args.attention, se_reduction=args.se_reduction)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.lr < 0:
        raise UsageError("--lr must be non-negative")


# --- commands -----------------------------------------------------------------

def cmd_synth(args):
    h, w = args.size
    if args.looks < 3:
        raise UsageError("--looks must be >= 3")
    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    image, labels = generate_scene(separated_classes(args.classes, args.looks), args.layout,
                                   h, w, args.seed)
    out = Path(args.out)
    write_t3_directory(image, out / "T3")
    write_label_map(labels, out / "labels.plbl")
    render_pauli_rgb(image, out / "pauli.png")
    render_class_map(labels, default_palette(labels.num_classes), out / "labels.png")
    _write_manifest(out / "manifest.json", args, {})


def cmd_train(args):
    _check_train_args(args)
    image = read_t3_directory(args.t3)
    ref = read_label_map(args.labels)
    if ref.shape != (image.height, image.width):
        raise ValueError(f"dimension mismatch: image {image.height}x{image.width}, "
                         f"labels {ref.shape[0]}x{ref.shape[1]}")
    model_config, train_config = _configs(args, ref.num_classes)
    image = normalize_channels(image)
    split = stratified_split(ref, args.ratio, args.seed)
    train, _ = build_dataset(image, ref, replace(split, test={}), args.window)
    net = build(model_config, args.seed)

    def progress(rec):
        log.info("epoch %d train_loss %.4f val_loss %.4f val_oa %.4f",
                 rec.epoch, rec.train_loss, rec.val_loss, rec.val_oa)

    net, train_log = fit(net, train, train_config, progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, out / "model.cvps")
    (out / "train_log.csv").write_text(train_log.to_csv())
    (out / "timing.csv").write_text(train_log.timing_csv())
    if args.eval_test:
        coords = np.concatenate([split.test[c] for c in sorted(split.test)])
        pred = np.concatenate([
            predict_patches(net, extract_patches(image, blk[:, 0], blk[:, 1], args.window))
            for blk in np.array_split(coords, max(1, len(coords) // 256))])
        truth = ref.labels[coords[:, 0], coords[:, 1]]
        report = metrics_from_confusion(confusion_matrix(pred, truth, ref.num_classes))
        (out / "test_report.txt").write_text(report.to_text())
    counts = {"train_counts": {str(c): n for c, n in split.train_counts().items()},
              "test_counts": {str(c): n for c, n in split.test_counts().items()},
              "model_config": model_config.as_dict(), "train_config": asdict(train_config)}
    _write_manifest(out / "manifest.json", args, {"t3": args.t3, "labels": args.labels}, counts)


def cmd_classify(args):
    net = load_checkpoint(args.checkpoint)
    image = read_t3_directory(args.t3)
    pred = classify_image(net, normalize_channels(image), batch_size=args.batch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    palette = default_palette(pred.num_classes)
    write_label_map(pred, out / "pred.plbl")
    render_class_map(pred, palette, out / "pred.png")
    if args.median_filter:
        filtered = median_filter_classmap(pred)
        write_label_map(filtered, out / "pred_median.plbl")
        render_class_map(filtered, palette, out / "pred_median.png")
    _write_manifest(out / "manifest.json", args,
                    {"checkpoint": args.checkpoint, "t3": args.t3})


def cmd_eval(args):
    pred = read_label_map(args.pred)
    ref = read_label_map(args.ref)
    report = compute_metrics(pred, ref)
    text = report.to_text()
    Path(args.out).write_text(text)
    sys.stdout.write(text)
    _write_manifest(str(args.out) + ".manifest.json", args,
                    {"pred": args.pred, "ref": args.ref})


def cmd_sweep(args):
    _check_train_args(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    if args.mode == "window" and any(v != int(v) or v < 3 or int(v) % 2 == 0 for v in values):
        raise UsageError("window values must be odd integers >= 3")
    if args.mode == "ratio" and any(not 0 < v < 1 for v in values):
        raise UsageError("ratio values must lie in (0, 1)")
    image = read_t3_directory(args.t3)
    ref = read_label_map(args.labels)
    model_config, train_config = _configs(args, ref.num_classes)
    common = dict(trials=args.trials, seed=args.seed, train_config=train_config,
                  model_config=model_config)
    if args.mode == "window":
        rows = window_sweep(image, ref, [int(v) for v in values], ratio=args.ratio, **common)
    else:
        rows = ratio_sweep(image, ref, values, window=args.window, **common)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(sweep_csv(rows))
    _write_manifest(str(out) + ".manifest.json", args, {"t3": args.t3, "labels": args.labels})


def cmd_rerun(args):
    data = json.loads(Path(args.manifest).read_text())
    if data.get("tool") != "polcvnn":
        raise ValueError("not a polcvnn manifest")
    argv = [data["command"]]
    for key, value in data["args"].items():
        if key == "command":
            continue
        if key == "out" and args.out:
            value = args.out
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif value is None:
            continue
        elif isinstance(value, list):
            if key == "size":
                argv += [flag, "x".join(str(v) for v in value)]
            else:
                argv += [flag, ",".join(str(v) for v in value)]
        else:
            argv += [flag, str(value)]
    return main(argv)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "classify": cmd_classify,
            "eval": cmd_eval, "sweep": cmd_sweep, "rerun": cmd_rerun}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)          # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        result = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"polcvnn: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"polcvnn: {exc}", file=sys.stderr)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
