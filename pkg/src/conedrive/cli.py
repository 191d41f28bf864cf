"""Command-line entry point wiring the modules into reproducible workflows.

Every subcommand writes a reproducibility stanza (run_info.txt: argv, seed,
versions) next to its outputs and exits with a category-specific code:

    0  success
    2  usage or configuration error
    3  referenced input path not found
    4  malformed input (telemetry, image, manifest, checkpoint, model text)
    5  runtime failure (training divergence, non-finite values)

A flat key=value config file may supply any flag of the chosen subcommand
(``--config run.cfg``); flags given on the command line override the file.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .bench import bench_forward, write_latency_report
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import load_pairs, prep_corpus, read_manifest, write_corpus, write_manifest
from .data import (DatasetSplit, brake_throttle_arrays, build_mixed_set,
                   classification_arrays, regression_arrays, shift_augment,
                   split_60_20_20)
from .errors import (CheckpointError, DataError, DivergenceError, GraphError,
                     NumericError, ShapeError)
from .graph import Model
from .metrics import eval_classification, eval_regression, export_activations
from .overlay import Prediction, render_sequence
from .synth import synth_track_dataset
from .train import (DEFAULT_FILTER_GRID, DEFAULT_STRIDE_GRID, TrainConfig,
                    grid_search, train, write_grid_table, write_history)
from .zoo import (make_brake_throttle_model, make_discrete_model,
                  make_realvalue_model)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_BAD_INPUT = 4
EXIT_RUNTIME = 5

TASKS = ("discrete", "real", "brake_throttle")


def _write_run_info(out_dir, args) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run_info.txt"), "w") as fh:
        fh.write(f"conedrive {__version__}; numpy {np.__version__}; "
                 f"python {sys.version.split()[0]}\n")
        fh.write("argv: " + " ".join(sys.argv[1:]) + "\n")
        for key, value in sorted(vars(args).items()):
            if key != "func":
                fh.write(f"{key}={value}\n")


def _require_paths(*paths) -> None:
    for path in paths:
        if path is not None and not os.path.exists(path):
            raise FileNotFoundError(path)


def _parse_crop(text):
    if text is None:
        return None
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("crop must be x0,y0,width,height")
    return tuple(parts)


def _load_split(args):
    """Dataset split from --synth or from manifest + telemetry + frames."""
    if args.synth:
        pairs = synth_track_dataset(args.synth, args.image_size, args.seed)
        return split_60_20_20(pairs, args.seed)
    if not (args.manifest and args.telemetry and args.frames):
        raise DataError(
            "need either --synth N or all of --manifest/--telemetry/--frames"
        )
    _require_paths(args.manifest, args.telemetry, args.frames)
    membership, seed, dropped = read_manifest(args.manifest)
    crop = getattr(args, "crop", None)
    return DatasetSplit(
        train=load_pairs(membership["train"], args.telemetry, args.frames,
                         args.image_size, crop),
        validation=load_pairs(membership["val"], args.telemetry, args.frames,
                              args.image_size, crop),
        test=load_pairs(membership["test"], args.telemetry, args.frames,
                        args.image_size, crop),
        seed=seed,
        dropped=dropped,
    )


def _arrays_for(task, pairs):
    if task == "discrete":
        return classification_arrays(pairs)
    if task == "real":
        return regression_arrays(pairs)
    return brake_throttle_arrays(pairs)


def _build_model(task, arch, image_size, seed):
    if task == "discrete":
        spec = make_discrete_model(arch, input_hw=image_size)
    elif task == "real":
        spec = make_realvalue_model(arch, input_hw=image_size)
    else:
        spec = make_brake_throttle_model(input_hw=image_size)
    return Model(spec, seed=seed)


def _train_config(args, loss):
    return TrainConfig(initial_lr=args.lr, decay=args.decay,
                       batch_size=args.batch_size, epochs=args.epochs,
                       seed=args.seed, loss=loss)


def cmd_prep(args) -> int:
    _write_run_info(args.out, args)
    if args.synth:
        corpus_dir = os.path.join(args.out, "corpus")
        pairs = synth_track_dataset(args.synth, args.image_size, args.seed)
        write_corpus(pairs, corpus_dir)
        telemetry = os.path.join(corpus_dir, "telemetry.csv")
        frames = os.path.join(corpus_dir, "frames")
        print(f"synthetic corpus of {args.synth} frames written to {corpus_dir}")
    else:
        if not (args.telemetry and args.frames):
            raise DataError("prep needs --telemetry and --frames (or --synth N)")
        telemetry, frames = args.telemetry, args.frames
        _require_paths(telemetry, frames)
    split, skipped, warnings = prep_corpus(telemetry, frames, args.seed, args.crop)
    manifest = os.path.join(args.out, "manifest.tsv")
    write_manifest(manifest, split)
    print(f"{len(split.train)}/{len(split.validation)}/{len(split.test)}, "
          f"{split.dropped} dropped")
    if skipped:
        print(f"skipped {len(skipped)} malformed telemetry rows: "
              f"{skipped[:10]}{'...' if len(skipped) > 10 else ''}")
    if warnings:
        print(f"clamped {warnings} out-of-range signal values")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    _write_run_info(args.out, args)
    split = _load_split(args)
    loss = "cross_entropy" if args.task == "discrete" else "smooth_l1"
    config = _train_config(args, loss)
    if args.resume:
        _require_paths(args.resume)
        model = load_checkpoint(args.resume)
        start_epoch = model.epoch
    else:
        model = _build_model(args.task, args.arch, args.image_size, args.seed)
        start_epoch = 0
    train_data = _arrays_for(args.task, split.train)
    val_data = _arrays_for(args.task, split.validation)
    metric = "val_acc" if loss == "cross_entropy" else "val_l1"
    result = train(model, train_data, val_data, config, start_epoch=start_epoch,
                   log=lambda s: print(
                       f"epoch {s.epoch}: lr={s.lr:.6f} train_loss={s.train_loss:.5f} "
                       f"{metric}={s.val_metric:.5f} ({s.seconds:.1f}s)"))
    write_history(os.path.join(args.out, "history.tsv"), result, config)
    ckpt = os.path.join(args.out, "model.ckpt")
    save_checkpoint(model, ckpt)
    with open(os.path.join(args.out, "model.txt"), "w") as fh:
        fh.write(model.spec.to_text())
    print(f"checkpoint: {ckpt}")
    if result.diverged:
        raise DivergenceError(result.divergence_reason)
    return EXIT_OK


def cmd_eval(args) -> int:
    _write_run_info(args.out, args)
    _require_paths(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    split = _load_split(args)
    pairs = {"train": split.train, "val": split.validation,
             "test": split.test}[args.split]
    task = {"softmax_head": "discrete", "clamp_scale": "real"}.get(
        model.output_kind(), "brake_throttle")
    inputs, targets = _arrays_for(task, pairs)
    if task == "discrete":
        report = eval_classification(model, inputs, targets, args.batch_size)
    elif task == "real":
        report = eval_regression(model, inputs, targets, args.batch_size)
    else:
        raise DataError("eval supports discrete and real checkpoints")
    path = os.path.join(args.out, "report.txt")
    with open(path, "w") as fh:
        fh.write(f"# seed={args.seed} checkpoint={args.checkpoint} "
                 f"split={args.split}\n")
        fh.write(report.to_text())
    print(report.to_text(), end="")
    print(f"report: {path}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    _write_run_info(args.out, args)
    split = _load_split(args)
    config = _train_config(args, "smooth_l1")
    filter_sets = _parse_grid(args.filters) if args.filters else DEFAULT_FILTER_GRID
    stride_sets = _parse_grid(args.strides) if args.strides else DEFAULT_STRIDE_GRID
    results = grid_search(
        args.arch, filter_sets, stride_sets, config,
        _arrays_for("real", split.train), _arrays_for("real", split.validation),
        input_hw=args.image_size,
        log=lambda r: print(f"filters={r.filters} strides={r.strides} "
                            f"val_l1={r.val_loss:.4f}"
                            f"{' (diverged)' if r.diverged else ''}"))
    path = os.path.join(args.out, "grid.tsv")
    write_grid_table(path, results)
    best = results[0]
    print(f"best: filters={best.filters} strides={best.strides} "
          f"val_l1={best.val_loss:.4f}")
    print(f"table: {path}")
    return EXIT_OK


def _parse_grid(text):
    """'7,5;5,3' -> ((7, 5), (5, 3))"""
    out = []
    for chunk in text.split(";"):
        pair = tuple(int(v) for v in chunk.split(","))
        if len(pair) != 2:
            raise argparse.ArgumentTypeError(
                f"grid entries are compressed pairs like 7,5 (got {chunk!r})"
            )
        out.append(pair)
    return tuple(out)


def cmd_augment(args) -> int:
    _write_run_info(args.out, args)
    split = _load_split(args)
    pairs = split.train
    rng = np.random.default_rng(args.seed)
    shifts = rng.integers(-args.shift_range, args.shift_range + 1, size=len(pairs))
    shifted = [shift_augment(p, int(s), args.k) for p, s in zip(pairs, shifts)]
    aug_dir = os.path.join(args.out, "augmented")
    write_corpus(shifted, aug_dir)
    print(f"{len(shifted)} shifted frames written to {aug_dir}")
    if args.mixed_size:
        mixed = build_mixed_set(pairs, shifted, args.mixed_size, args.seed)
        mixed_dir = os.path.join(args.out, "mixed")
        write_corpus(mixed, mixed_dir)
        n_normal = round(0.15 * args.mixed_size)
        print(f"mixed evaluation set ({n_normal} normal / "
              f"{args.mixed_size - n_normal} shifted) written to {mixed_dir}")
    return EXIT_OK


def cmd_render(args) -> int:
    _write_run_info(args.out, args)
    split = _load_split(args)
    pairs = {"train": split.train, "val": split.validation,
             "test": split.test}[args.split]
    if args.limit:
        pairs = pairs[: args.limit]
    predictions = None
    if args.checkpoint:
        _require_paths(args.checkpoint)
        model = load_checkpoint(args.checkpoint)
        kind = model.output_kind()
        predictions = []
        for pair in pairs:
            out = model.forward({"image": pair.image[None]}, mode="eval") \
                if kind != "scaled_sigmoid" else model.forward(
                    {"image": pair.image[None],
                     "motor": np.array([[pair.record.left_motor_speed,
                                         pair.record.right_motor_speed]],
                                       dtype=np.float32)}, mode="eval")
            if kind == "clamp_scale":
                predictions.append(Prediction(steering=float(out[0, 0])))
            elif kind == "softmax_head":
                cls = int(out.argmax(axis=1)[0]) + 1
                predictions.append(
                    Prediction(steering={1: 30.0, 2: 0.0, 3: -30.0}[cls]))
            else:
                predictions.append(Prediction(brake=float(out[0, 0]),
                                              throttle=float(out[0, 1])))
    frames_dir = os.path.join(args.out, "sim")
    paths = render_sequence(pairs, predictions, frames_dir)
    print(f"{len(paths)} overlay frames in {frames_dir}")
    print(f"stitch at the corpus rate of ~8 FPS, e.g.:\n"
          f"  ffmpeg -framerate 8 -i {frames_dir}/sim_%06d.ppm review.mp4")
    return EXIT_OK


def cmd_bench(args) -> int:
    _write_run_info(args.out, args)
    if args.checkpoint:
        _require_paths(args.checkpoint)
        model = load_checkpoint(args.checkpoint)
    else:
        model = _build_model(args.task, args.arch, args.image_size, args.seed)
    report = bench_forward(model, warmup=args.warmup, iters=args.iters,
                           seed=args.seed)
    write_latency_report(report,
                         os.path.join(args.out, "latency.txt"),
                         os.path.join(args.out, "latency.tsv"))
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_activations(args) -> int:
    _write_run_info(args.out, args)
    _require_paths(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    split = _load_split(args)
    pairs = {"train": split.train, "val": split.validation,
             "test": split.test}[args.split]
    task = {"softmax_head": "discrete", "clamp_scale": "real"}.get(
        model.output_kind(), "brake_throttle")
    inputs, targets = _arrays_for(task, pairs)
    path = os.path.join(args.out, "activations.tsv")
    rows = export_activations(model, inputs, targets, path,
                              layer=args.layer, batch_size=args.batch_size)
    print(f"{rows} activation rows in {path}")
    return EXIT_OK


def _add_data_flags(p, with_crop=False):
    p.add_argument("--synth", type=int, default=0, metavar="N",
                   help="generate an N-frame synthetic track dataset")
    p.add_argument("--manifest", help="dataset manifest from 'prep'")
    p.add_argument("--telemetry", help="telemetry CSV")
    p.add_argument("--frames", help="frames directory with sidecar index")
    p.add_argument("--image-size", type=int, default=64,
                   help="square image/network input size (default 64)")
    if with_crop:
        p.add_argument("--crop", type=_parse_crop, default=None,
                       help="crop rectangle x0,y0,width,height")


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--decay", type=float, default=1.0 / 1.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conedrive",
        description="End-to-end CNN driving controllers, desk scale.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="parse, scale, pair, split; write manifest")
    p.add_argument("--telemetry")
    p.add_argument("--frames")
    p.add_argument("--synth", type=int, default=0, metavar="N")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--crop", type=_parse_crop, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train a controller network")
    _add_data_flags(p, with_crop=True)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--arch", default="3CL-2FC")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_data_flags(p, with_crop=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", help="filter/stride grid over full runs")
    _add_data_flags(p)
    p.add_argument("--arch", default="4CL-3FC")
    p.add_argument("--filters", help="compressed pairs, e.g. '7,5;5,5;5,3;3,3'")
    p.add_argument("--strides", help="compressed pairs, e.g. '2,1;2,2'")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("augment", help="shift-translate frames; optional mixed set")
    _add_data_flags(p)
    p.add_argument("--shift-range", type=int, default=24,
                   help="shifts drawn uniformly from [-R, R] pixels")
    p.add_argument("--k", type=float, default=0.15,
                   help="steering correction in degrees per pixel")
    p.add_argument("--mixed-size", type=int, default=0,
                   help="also build a 15%%/85%% normal/shifted evaluation set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("render", help="overlay frames for visual review")
    _add_data_flags(p)
    p.add_argument("--checkpoint", help="render this model's predictions too")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--limit", type=int, default=0, help="render first N pairs only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench", help="forward-pass latency report")
    p.add_argument("--task", choices=TASKS, default="real")
    p.add_argument("--arch", default="4CL-3FC")
    p.add_argument("--checkpoint", help="bench a trained model instead")
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("activations", help="export hidden-FC activations")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--layer", help="node name; default: last hidden FC ReLU")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_activations)
    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Insert key=value pairs from --config FILE as flags after the subcommand.

    Explicit command-line flags come later in argv, so they override the file.
    """
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        raise DataError("--config needs a file argument")
    path = argv[at + 1]
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    tokens: list[str] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"config lines must be key=value, got {line!r}")
            key, value = line.split("=", 1)
            tokens += [f"--{key.strip().replace('_', '-')}", value.strip()]
    rest = argv[:at] + argv[at + 2 :]
    if not rest:
        raise DataError("--config requires a subcommand")
    return rest[:1] + tokens + rest[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(argv)
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: input not found: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (DataError, CheckpointError, GraphError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (DivergenceError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
