"""Single-video generative modeling: a hierarchical patch VAE-GAN.

Train on one clip (or image), then draw diverse novel samples of arbitrary
shape. The pyramid is coarse to fine: the lowest scales form a patch VAE that
captures structural diversity, the upper scales are patch GANs that sharpen
detail.
"""
from __future__ import annotations

from .core import (
    PyramidSchedule,
    RunConfig,
    ScaleSpec,
    VideoTensor,
    build_schedule,
    config_hash,
    load_config,
    save_config,
)
from .checkpoint import has_checkpoint, load_state, save_state
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    LossError,
    MetricError,
    PatchGenError,
    ResampleError,
    ScheduleError,
    StateError,
)
from .hierarchy import (
    ModelState,
    generate_random,
    init_state,
    inject,
    reconstruct_chain,
    sample_video,
    train_all,
    train_scale,
)
from .metrics import (
    FeatureMap,
    RandomConvFeatures,
    RawPixelFeatures,
    diversity,
    frechet_distance,
    subsampled_fid,
    svfid,
)
from .videoio import load_clip, save_clip

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "FeatureMap",
    "LossError",
    "MetricError",
    "ModelState",
    "PatchGenError",
    "PyramidSchedule",
    "RandomConvFeatures",
    "RawPixelFeatures",
    "ResampleError",
    "RunConfig",
    "ScaleSpec",
    "ScheduleError",
    "StateError",
    "VideoTensor",
    "build_schedule",
    "config_hash",
    "diversity",
    "frechet_distance",
    "generate_random",
    "has_checkpoint",
    "init_state",
    "inject",
    "load_clip",
    "load_config",
    "load_state",
    "reconstruct_chain",
    "sample_video",
    "save_clip",
    "save_config",
    "save_state",
    "subsampled_fid",
    "svfid",
    "train_all",
    "train_scale",
    "__version__",
]
