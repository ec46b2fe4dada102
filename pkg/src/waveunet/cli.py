"""Command-line entry point: ``waveunet {train,separate,evaluate,sizes,trace}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .audio import index_dataset, load_track, read_wav, resample, separate_track, split_tracks, write_wav
from .errors import ConfigError, DataError, DecodeError, NumericalError, SizeError, UsageError
from .evaluation import evaluate_dataset
from .model import ModelConfig, compute_valid_sizes, load_preset, preset_names, shape_trace
from .training import load_train_config, train

log = logging.getLogger("waveunet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("WAVEUNET_THREADS", "1")))
    except ValueError:
        return 1


def cmd_train(args) -> int:
    config, hyper = load_train_config(args.config)
    if hyper.dataset_dir is None:
        raise ConfigError("training config needs 'dataset_dir'")
    out = Path(args.out)
    index = index_dataset(hyper.dataset_dir, config.source_names)
    if len(index.tracks) < 2:
        raise DataError(f"{hyper.dataset_dir}: need at least 2 tracks for a train/validation split")
    train_entries, val_entries = split_tracks(index, hyper.val_fraction, hyper.seed)

    def load(entries):
        return [load_track(e, config.source_names, config.sample_rate, config.num_channels) for e in entries]

    train_set, val_set = load(train_entries), load(val_entries)
    log.info("training on %d tracks, validating on %d", len(train_set), len(val_set))
    resume = None
    if args.resume:
        last = out / "last.ckpt"
        if not last.exists():
            raise UsageError(f"--resume: no checkpoint at {last}")
        resume = ckpt_io.load(last)
    best = train(train_set, val_set, config, hyper, out_dir=out, resume=resume)
    ckpt_io.save(best, out / "best.ckpt")
    summary = {
        "best_val_loss": best.training["state"]["best_val_loss"],
        "epochs": best.training["state"]["epoch"],
        "steps": best.training["state"]["step"],
        "train_tracks": [e.name for e in train_entries],
        "val_tracks": [e.name for e in val_entries],
        "checkpoint_sha256": ckpt_io.file_hash(out / "best.ckpt"),
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("best validation MSE %.6g -> %s", summary["best_val_loss"], out / "best.ckpt")
    return EXIT_OK


def cmd_separate(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    config = ck.config
    try:
        clip = read_wav(args.input)
    except (DecodeError, OSError) as exc:
        raise DataError(str(exc)) from None
    if clip.channels != config.num_channels:
        raise UsageError(f"{args.input} has {clip.channels} channels, model expects {config.num_channels}")
    clip = resample(clip, config.sample_rate)
    estimates = separate_track(ck.params, config, clip)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, est in zip(config.source_names, estimates):
        path = out / f"{name}.wav"
        write_wav(est, path, args.format)
        written[name] = str(path)
        log.info("wrote %s (%d frames)", path, est.frames)
    result = {"input": str(args.input), "sample_rate": config.sample_rate, "frames": clip.frames, "outputs": written}
    (out / "separation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    index = index_dataset(args.dataset, ck.config.source_names)
    if not index.tracks:
        raise UsageError(f"{args.dataset}: dataset contains no tracks")
    report = evaluate_dataset(
        ck.params,
        ck.config,
        index,
        args.segment_seconds,
        args.mode,
        threads=_threads(),
        checkpoint_hash=ckpt_io.file_hash(args.checkpoint),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.json", out / "scores.csv")
    print(report.table())
    if report.failures:
        log.error("%d track(s) failed", len(report.failures))
        return EXIT_DATA
    return EXIT_OK


def _config_from_args(args) -> ModelConfig:
    if getattr(args, "preset", None):
        return load_preset(args.preset)
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        raw = raw.get("model", raw)
        if isinstance(raw, str):
            return load_preset(raw)
        return ModelConfig.from_dict(raw)
    raise UsageError("give --preset or --config")


def cmd_sizes(args) -> int:
    if args.out < 1:
        raise UsageError(f"--out must be >= 1, got {args.out}")
    config = ModelConfig(
        levels=args.levels,
        down_kernel=args.fd,
        up_kernel=args.fu,
        context=not args.no_context,
        input_frames=2,
        output_frames=1,
    )
    config.validate(check_sizes=False)
    n_in, n_out = compute_valid_sizes(config, args.out)
    print(f"{n_in} {n_out}")
    return EXIT_OK


def cmd_trace(args) -> int:
    config = _config_from_args(args)
    for name, frames, channels in shape_trace(config):
        print(f"{name:<16} ({frames},{channels})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="waveunet", description="Wave-U-Net source separation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", help="separate one WAV file into source WAVs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("pcm16", "float32"), default="pcm16")
    s.set_defaults(func=cmd_separate)

    e = sub.add_parser("evaluate", help="segment-wise SDR over a dataset directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--segment-seconds", type=float, default=1.0)
    e.add_argument("--mode", choices=("plain", "projected"), default="plain")
    e.set_defaults(func=cmd_evaluate)

    z = sub.add_parser("sizes", help="valid (input, output) sizes for a context model")
    z.add_argument("--levels", type=int, default=12)
    z.add_argument("--fd", type=int, default=15)
    z.add_argument("--fu", type=int, default=5)
    z.add_argument("--out", type=int, required=True, help="desired output frames")
    z.add_argument("--no-context", action="store_true")
    z.set_defaults(func=cmd_sizes)

    r = sub.add_parser("trace", help="block-by-block shape table")
    g = r.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=preset_names())
    g.add_argument("--config")
    r.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, UsageError, SizeError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except DecodeError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except NumericalError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
