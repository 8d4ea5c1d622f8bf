"""Core types, run configuration, and the scale schedule.

A model is a pyramid of scales indexed 0..N, coarse to fine. Each scale has a
temporal stride (how sparsely source frames are sampled) and a spatial size.
Scale 0 is the coarsest; the finest scale N sees every frame of a training
slice at the largest resolution.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import typing
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ScheduleError

HEIGHT_GROWTH = 1.33  # spatial growth factor per scale

_RANGE_TOL = 1e-9  # slack for float round-off at the [-1, 1] boundary


def round_half_up(x: float) -> int:
    """Round to nearest integer, ties away from zero for positive x."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class VideoTensor:
    """A [T, H, W, C] float64 clip with values in [-1, 1].

    This is the exchange type for training material and exported samples.
    Intermediate activations inside the model are plain arrays and are not
    required to stay in range.
    """

    data: np.ndarray
    fps: float = 24.0

    def __post_init__(self) -> None:
        d = self.data
        if not isinstance(d, np.ndarray) or d.ndim != 4:
            raise DataError("video data must be a [T, H, W, C] array")
        if any(s < 1 for s in d.shape):
            raise DataError(f"empty axis in video shape {d.shape}")
        if d.shape[3] not in (1, 3):
            raise DataError(f"channel count must be 1 or 3, got {d.shape[3]}")
        if d.dtype != np.float64:
            d = d.astype(np.float64)
            object.__setattr__(self, "data", d)
        if not np.isfinite(d).all():
            raise DataError("video contains non-finite values")
        lo, hi = float(d.min()), float(d.max())
        if lo < -1.0 - _RANGE_TOL or hi > 1.0 + _RANGE_TOL:
            raise DataError(f"video values must lie in [-1, 1], got [{lo:.4g}, {hi:.4g}]")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def volume_shape(self) -> tuple[int, int, int]:
        return self.data.shape[:3]


@dataclass(frozen=True)
class ScaleSpec:
    """Geometry of one pyramid scale."""

    index: int
    temporal_stride: int  # source frames advance by this much per kept frame
    frames: int  # frame count at this scale
    height: int
    width: int

    @property
    def volume_shape(self) -> tuple[int, int, int]:
        return (self.frames, self.height, self.width)


@dataclass(frozen=True)
class PyramidSchedule:
    """The full coarse-to-fine ladder plus the slice length it assumes."""

    specs: tuple[ScaleSpec, ...]
    slice_frames: int  # source frames each training slice must span

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __getitem__(self, n: int) -> ScaleSpec:
        return self.specs[n]

    @property
    def finest(self) -> ScaleSpec:
        return self.specs[-1]

    def describe(self) -> str:
        lines = ["scale  stride  frames  height  width"]
        for s in self.specs:
            lines.append(
                f"{s.index:>5}  {s.temporal_stride:>6}  {s.frames:>6}  {s.height:>6}  {s.width:>5}"
            )
        return "\n".join(lines)


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs besides the input clip.

    Defaults reproduce the full-size setup; tests and quick runs override
    the sizes downward.
    """

    finest_scale: int = 9  # index N of the finest scale
    vae_levels: int = 3  # scales 0..vae_levels train as a patch VAE, the rest as a patch GAN
    frame_strides: tuple[int, ...] = (1, 2, 3, 4)  # temporal strides available to the ladder
    base_height: int = 32  # coarsest spatial height, px
    max_height: int = 256  # spatial height cap, px
    channels: int = 64  # conv width of every block
    latent_dim: int = 128  # channels of the latent field
    blocks: int = 5  # conv blocks per network
    kernel: int = 3  # conv kernel size per axis
    lr: float = 5e-4
    lr_decay: float = 0.2  # per-scale decay for encoder/base-generator fine-tuning
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    iters_per_scale: int = 20000
    critic_steps: int = 3  # critic updates per generator update
    beta_vae: float = 0.1  # KL weight
    beta_adv: float = 0.1  # adversarial weight
    gp_weight: float = 10.0  # gradient-penalty weight
    spatial_only: bool = False  # image mode: single frame, no temporal axis
    seed: int = 0

    def validate(self) -> None:
        """Raise ConfigError on any out-of-contract value."""
        if self.finest_scale < 1:
            raise ConfigError(f"finest_scale must be >= 1, got {self.finest_scale}")
        if not 1 <= self.vae_levels <= self.finest_scale:
            raise ConfigError(
                f"vae_levels must lie in [1, finest_scale={self.finest_scale}], got {self.vae_levels}"
            )
        if not self.frame_strides:
            raise ConfigError("frame_strides must be non-empty")
        if any(s < 1 for s in self.frame_strides):
            raise ConfigError(f"frame_strides must be positive, got {self.frame_strides}")
        if len(set(self.frame_strides)) != len(self.frame_strides):
            raise ConfigError(f"frame_strides must be unique, got {self.frame_strides}")
        if 1 not in self.frame_strides:
            raise ConfigError("frame_strides must include 1 so the finest scale sees every frame")
        if self.base_height < 1 or self.max_height < self.base_height:
            raise ConfigError(
                f"need 1 <= base_height <= max_height, got {self.base_height}, {self.max_height}"
            )
        if self.channels < 1 or self.latent_dim < 1:
            raise ConfigError("channels and latent_dim must be positive")
        if self.blocks < 2:
            raise ConfigError(f"blocks must be >= 2, got {self.blocks}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd and positive, got {self.kernel}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")
        if self.iters_per_scale < 1:
            raise ConfigError(f"iters_per_scale must be >= 1, got {self.iters_per_scale}")
        if self.critic_steps < 1:
            raise ConfigError(f"critic_steps must be >= 1, got {self.critic_steps}")
        for name in ("beta_vae", "beta_adv", "gp_weight"):
            v = getattr(self, name)
            if v < 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")


_FIELD_TYPES = typing.get_type_hints(RunConfig)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(name: str, text: str):
    typ = _FIELD_TYPES[name]
    text = text.strip()
    try:
        if typ is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"config key '{name}': cannot parse {text!r}") from exc


def config_to_dict(config: RunConfig) -> dict:
    d = dataclasses.asdict(config)
    d["frame_strides"] = list(config.frame_strides)
    return d


def config_from_dict(values: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    coerced = dict(values)
    if "frame_strides" in coerced:
        coerced["frame_strides"] = tuple(int(s) for s in coerced["frame_strides"])
    config = RunConfig(**coerced)
    config.validate()
    return config


def load_config(path) -> RunConfig:
    """Parse a flat `key = value` config file. Unknown keys are rejected."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    try:
        text = open(path, "r", encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key '{key}'")
        values[key] = _parse_value(key, val)
    config = RunConfig(**values)
    config.validate()
    return config


def save_config(config: RunConfig, path) -> None:
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}" for f in dataclasses.fields(RunConfig)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def config_hash(config: RunConfig) -> str:
    """Short digest identifying a configuration in reports and checkpoints."""
    lines = sorted(f"{f.name}={_format_value(getattr(config, f.name))}" for f in dataclasses.fields(RunConfig))
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:12]


def schedule_for_shape(config: RunConfig, frames: int, height: int, width: int) -> PyramidSchedule:
    """Build the scale ladder for a source of the given dimensions."""
    config.validate()
    if frames < 1 or height < 1 or width < 1:
        raise DataError(f"source dimensions must be positive, got {(frames, height, width)}")

    image_mode = config.spatial_only
    if frames == 1 and not image_mode:
        raise ScheduleError("single-frame source requires spatial_only = true")

    n_scales = config.finest_scale + 1
    if image_mode:
        slice_frames = 1
        strides = [1] * n_scales
    else:
        slice_frames = math.lcm(*config.frame_strides) + 1
        if frames < slice_frames:
            raise ScheduleError(
                f"source has {frames} frames but the schedule needs at least {slice_frames}"
            )
        omega = sorted(set(config.frame_strides), reverse=True)
        strides = [
            omega[round_half_up(n * (len(omega) - 1) / config.finest_scale)]
            for n in range(n_scales)
        ]

    cap = min(config.max_height, height)
    base = min(config.base_height, cap)
    specs = []
    for n in range(n_scales):
        h = min(round_half_up(base * HEIGHT_GROWTH**n), cap)
        w = max(1, round_half_up(h * width / height))
        stride = strides[n]
        count = 1 if image_mode else (slice_frames - 1) // stride + 1
        specs.append(ScaleSpec(index=n, temporal_stride=stride, frames=count, height=h, width=w))
    return PyramidSchedule(specs=tuple(specs), slice_frames=slice_frames)


def build_schedule(config: RunConfig, source: VideoTensor) -> PyramidSchedule:
    """Scale ladder for a training source; rejects clips shorter than a slice."""
    return schedule_for_shape(config, source.frames, source.height, source.width)


def cut_slices(source: VideoTensor, slice_frames: int, max_slices: int = 0) -> list[VideoTensor]:
    """Cut a source video into consecutive non-overlapping training slices.

    Trailing frames that do not fill a slice are dropped. `max_slices` of 0
    keeps every full slice.
    """
    if slice_frames < 1:
        raise DataError(f"slice_frames must be positive, got {slice_frames}")
    count = source.frames // slice_frames
    if count < 1:
        raise ScheduleError(
            f"source has {source.frames} frames but a slice needs {slice_frames}"
        )
    if max_slices > 0:
        count = min(count, max_slices)
    return [
        VideoTensor(source.data[i * slice_frames : (i + 1) * slice_frames], fps=source.fps)
        for i in range(count)
    ]
