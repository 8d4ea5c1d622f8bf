"""Checkpoint persistence: a manifest plus one .npz per network.

A checkpoint directory is valid once manifest.json exists; network files are
written first so a crash mid-save never leaves a manifest pointing at missing
arrays. Checkpoints are taken at scale boundaries and training resumes from
the scale cursor; per-scale optimizers start fresh at each scale, so no
optimizer state needs to persist for the resumed run to match an
uninterrupted one. A lock file refuses concurrent writers.
"""
from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .core import PyramidSchedule, ScaleSpec, config_from_dict, config_hash, config_to_dict
from .errors import StateError
from .hierarchy import ModelState, init_state
from .nn import Critic

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"


@contextmanager
def checkpoint_lock(directory: str | Path):
    """Exclusive writer lock on a checkpoint directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StateError(f"checkpoint {directory} is locked by another writer") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _network_entries(state: ModelState) -> list[dict]:
    entries = [{"file": "encoder.npz", "role": "encoder", "scale": None}]
    for n in range(len(state.generators)):
        entries.append({"file": f"generator_{n:02d}.npz", "role": "generator", "scale": n})
    for n in sorted(state.critics):
        entries.append({"file": f"critic_{n:02d}.npz", "role": "critic", "scale": n})
    return entries


def save_state(state: ModelState, directory: str | Path) -> None:
    """Write every network and the manifest; refuses a foreign checkpoint."""
    directory = Path(directory)
    with checkpoint_lock(directory):
        manifest_path = directory / MANIFEST_NAME
        digest = config_hash(state.config)
        if manifest_path.exists():
            existing = json.loads(manifest_path.read_text())
            if existing.get("config_hash") != digest:
                raise StateError(
                    f"checkpoint {directory} belongs to a different configuration"
                )
        nets = {"encoder": state.encoder}
        for n, gen in enumerate(state.generators):
            nets[f"generator_{n:02d}"] = gen
        for n, critic in state.critics.items():
            nets[f"critic_{n:02d}"] = critic
        entries = _network_entries(state)
        for entry in entries:
            name = entry["file"].removesuffix(".npz")
            np.savez(directory / entry["file"], **nets[name].state_arrays())
        manifest = {
            "format_version": FORMAT_VERSION,
            "config": config_to_dict(state.config),
            "config_hash": digest,
            "channels": state.channels,
            "fps": state.fps,
            "trained_scale": state.trained_scale,
            "noise_amp": {str(k): v for k, v in state.noise_amp.items()},
            "schedule": {
                "slice_frames": state.schedule.slice_frames,
                "specs": [
                    [s.index, s.temporal_stride, s.frames, s.height, s.width]
                    for s in state.schedule
                ],
            },
            "networks": entries,
        }
        tmp = manifest_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(manifest, indent=2))
        tmp.replace(manifest_path)


def has_checkpoint(directory: str | Path) -> bool:
    return (Path(directory) / MANIFEST_NAME).exists()


def load_state(directory: str | Path) -> ModelState:
    """Rebuild a ModelState from a checkpoint directory."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise StateError(f"no checkpoint manifest in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise StateError(f"corrupt checkpoint manifest in {directory}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise StateError(
            f"unsupported checkpoint format {manifest.get('format_version')!r}"
        )
    config = config_from_dict(manifest["config"])
    if config_hash(config) != manifest["config_hash"]:
        raise StateError("checkpoint manifest config hash does not match its config")
    sched = manifest["schedule"]
    schedule = PyramidSchedule(
        specs=tuple(ScaleSpec(*row) for row in sched["specs"]),
        slice_frames=sched["slice_frames"],
    )
    state = init_state(config, schedule, manifest["channels"], fps=manifest["fps"])
    state.trained_scale = manifest["trained_scale"]
    state.noise_amp = {int(k): float(v) for k, v in manifest["noise_amp"].items()}

    from . import seeding
    from .nn import Generator

    for entry in manifest["networks"]:
        path = directory / entry["file"]
        if not path.exists():
            raise StateError(f"checkpoint is missing {entry['file']}")
        arrays = dict(np.load(path))
        role, scale = entry["role"], entry["scale"]
        if role == "encoder":
            net = state.encoder
        elif role == "generator":
            while len(state.generators) <= scale:
                n = len(state.generators)
                rng = seeding.stream(config.seed, seeding.INIT, 1, n)
                state.generators.append(
                    Generator(rng, state.channels, state.channels, config.channels, config.blocks, config.kernel)
                )
            net = state.generators[scale]
        elif role == "critic":
            if scale not in state.critics:
                rng = seeding.stream(config.seed, seeding.INIT, 2, scale)
                state.critics[scale] = Critic(
                    rng, state.channels, config.channels, config.blocks, config.kernel
                )
            net = state.critics[scale]
        else:
            raise StateError(f"unknown network role {role!r} in manifest")
        try:
            net.load_state_arrays(arrays)
        except (KeyError, ValueError) as exc:
            raise StateError(f"checkpoint file {entry['file']} is inconsistent: {exc}") from exc
    return state
