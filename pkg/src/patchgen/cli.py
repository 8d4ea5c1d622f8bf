"""Command line: train on a clip, sample, evaluate, inject a guide.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 state error,
5 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import seeding
from .checkpoint import has_checkpoint, load_state, save_state
from .core import (
    RunConfig,
    VideoTensor,
    build_schedule,
    config_hash,
    cut_slices,
    load_config,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    MetricError,
    PatchGenError,
    StateError,
)
from .hierarchy import (
    ModelState,
    build_pyramids,
    init_state,
    inject,
    reconstruct_chain,
    sample_video,
    train_all,
)
from .metrics import RandomConvFeatures, RawPixelFeatures, diversity, report_line, svfid
from .resample import downsample, resize_linear
from .videoio import load_clip, save_clip

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_STATE = 4
EXIT_DIVERGED = 5

CHECKPOINT_DIR = "checkpoint"
LOSS_LOG = "losses.jsonl"


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--shape wants T,H,W, got {text!r}")
    try:
        shape = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"--shape wants integers, got {text!r}") from exc
    if any(s < 1 for s in shape):
        raise ConfigError(f"--shape dimensions must be positive, got {text!r}")
    return shape


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchgen",
        description="Train a hierarchical patch generator on one clip and sample from it.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a clip or image, resuming any checkpoint")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--input", required=True, help="frame directory, raw container, or image")
    p.add_argument("--out", required=True, help="run directory for checkpoint and logs")

    p = sub.add_parser("sample", help="draw novel samples from a trained model")
    p.add_argument("--checkpoint", required=True, help="run or checkpoint directory")
    p.add_argument("--out", required=True, help="directory for emitted clips")
    p.add_argument("--count", type=int, default=1, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--shape", default=None, help="override output volume as T,H,W")

    p = sub.add_parser("evaluate", help="diversity and feature-distance report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="the training clip to compare against")
    p.add_argument("--count", type=int, default=50, help="generated samples to score")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="also write the report to this file")

    p = sub.add_parser("inject", help="re-render a guide clip through the upper scales")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="guide clip or image")
    p.add_argument("--start-scale", type=int, required=True, help="first scale to apply")
    p.add_argument("--out", required=True, help="directory for refined output and guide")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_checkpoint(path: str) -> ModelState:
    directory = Path(path)
    if not has_checkpoint(directory) and has_checkpoint(directory / CHECKPOINT_DIR):
        directory = directory / CHECKPOINT_DIR
    return load_state(directory)


def _require_complete(state: ModelState) -> None:
    if state.trained_scale < state.config.finest_scale:
        raise StateError(
            f"checkpoint is trained through scale {state.trained_scale} of "
            f"{state.config.finest_scale}; finish training first"
        )


def _training_clips(config: RunConfig, clip: VideoTensor) -> list[VideoTensor]:
    if config.spatial_only:
        if clip.frames != 1:
            raise DataError(
                f"spatial_only expects a single image, got {clip.frames} frames"
            )
        return [clip]
    schedule = build_schedule(config, clip)
    return cut_slices(clip, schedule.slice_frames)


def cmd_train(args) -> int:
    config = load_config(args.config)
    clip = load_clip(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_DIR

    if has_checkpoint(ckpt):
        state = load_state(ckpt)
        if config_hash(state.config) != config_hash(config):
            raise ConfigError(
                f"checkpoint in {ckpt} was trained with a different configuration"
            )
        logger.info("resuming from scale %d", state.trained_scale + 1)
    else:
        state = init_state(config, build_schedule(config, clip), clip.channels, fps=clip.fps)
    if state.trained_scale >= config.finest_scale:
        print(f"checkpoint in {ckpt} is already complete")
        return EXIT_OK

    clips = _training_clips(config, clip)
    logger.info("training on %d slice(s) of %d frames", len(clips), clips[0].frames)

    with open(out / LOSS_LOG, "a", encoding="utf-8") as log:

        def progress(entry: dict) -> None:
            log.write(json.dumps(entry) + "\n")

        def after_scale(s: ModelState, n: int) -> None:
            save_state(s, ckpt)
            logger.info("scale %d checkpointed", n)

        train_all(state, clips, progress=progress, after_scale=after_scale)

    print(f"trained through scale {state.trained_scale}; checkpoint in {ckpt}")
    return EXIT_OK


def cmd_sample(args) -> int:
    state = _load_checkpoint(args.checkpoint)
    _require_complete(state)
    if args.count < 1:
        raise ConfigError(f"--count must be positive, got {args.count}")
    shape = _parse_shape(args.shape) if args.shape else None
    out = Path(args.out)
    for i in range(args.count):
        rng = seeding.stream(args.seed, seeding.SAMPLE, i)
        sample = sample_video(state, rng, shape=shape)
        save_clip(sample, out / f"sample_{i:04d}")
    print(f"wrote {args.count} sample(s) to {out}")
    return EXIT_OK


def _model_space(state: ModelState, clip: VideoTensor) -> VideoTensor:
    """The first training slice projected to the finest model scale."""
    schedule = state.schedule
    if clip.frames < schedule.slice_frames:
        raise DataError(
            f"clip has {clip.frames} frames, the model's slices span {schedule.slice_frames}"
        )
    first = VideoTensor(clip.data[: schedule.slice_frames], fps=clip.fps)
    return downsample(first, schedule.finest)


def cmd_evaluate(args) -> int:
    state = _load_checkpoint(args.checkpoint)
    _require_complete(state)
    if args.count < 2:
        raise ConfigError(f"--count must be at least 2 for diversity, got {args.count}")
    real = _model_space(state, load_clip(args.input))

    samples = [
        sample_video(state, seeding.stream(args.seed, seeding.SAMPLE, i))
        for i in range(args.count)
    ]
    raw = RawPixelFeatures()
    conv = RandomConvFeatures(seed=0, in_channels=state.channels)
    digest = config_hash(state.config)

    lines = [
        report_line("diversity", diversity(real, samples), args.seed, digest),
        report_line(
            "svfid_raw_mean",
            float(np.mean([svfid(real, s, raw) for s in samples])),
            args.seed,
            digest,
        ),
        report_line(
            "svfid_conv_mean",
            float(np.mean([svfid(real, s, conv) for s in samples])),
            args.seed,
            digest,
        ),
    ]
    recon = VideoTensor(np.clip(reconstruct_chain(state, real), -1.0, 1.0), fps=real.fps)
    lines.append(report_line("svfid_raw_recon", svfid(real, recon, raw), args.seed, digest))

    report = "\n".join(lines)
    print(report)
    if args.out:
        Path(args.out).write_text(report + "\n")
    return EXIT_OK


def cmd_inject(args) -> int:
    state = _load_checkpoint(args.checkpoint)
    guide = load_clip(args.input)
    rng = seeding.stream(args.seed, seeding.SAMPLE, 0)
    refined = inject(state, guide, args.start_scale, rng=rng)
    out = Path(args.out)
    save_clip(refined, out / "refined")

    coarse = downsample(guide, state.schedule[args.start_scale - 1])
    side = resize_linear(coarse.data, refined.volume_shape)
    save_clip(VideoTensor(np.clip(side, -1.0, 1.0), fps=guide.fps), out / "guide")
    print(f"wrote refined clip and resampled guide to {out}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "inject": cmd_inject,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except StateError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except (DataError, MetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PatchGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
