"""Video resampling between pyramid scales.

Spatial resizing is separable endpoint-aligned linear interpolation: each axis
is resized by an explicit [out, in] weight matrix, so the operation is exactly
linear and its backprop adjoint is the exact transpose. Axes that do not
change size are skipped entirely, which keeps same-size resizes bit-exact.

Temporal DOWNSAMPLING is pure frame selection at indices {0, s, 2s, ...}: the
coarse scales must see real frames at a wider spacing, not temporal blurs.
Temporal upsampling interpolates like the spatial axes.
"""
from __future__ import annotations

import numpy as np

from .core import ScaleSpec, VideoTensor
from .errors import ResampleError


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] endpoint-aligned linear interpolation weights.

    Row i holds the two-tap weights for output coordinate i*(n_in-1)/(n_out-1).
    Endpoints land exactly on input samples (the first and last rows are
    one-hot), and every row is a convex combination.
    """
    if n_in < 1 or n_out < 1:
        raise ResampleError(f"axis sizes must be positive, got {n_in} -> {n_out}")
    if n_in == 1:
        return np.ones((n_out, 1))
    if n_out == 1:
        # endpoint alignment with a single output keeps the first sample
        m = np.zeros((1, n_in))
        m[0, 0] = 1.0
        return m
    m = np.zeros((n_out, n_in))
    coords = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(coords.astype(np.int64), n_in - 2)
    w = coords - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - w
    m[rows, lo + 1] = w
    return m


def _apply_axis(x: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    y = np.tensordot(matrix, x, axes=([1], [axis]))
    return np.moveaxis(y, 0, axis)


def resize_linear(x: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Resize the leading [T, H, W] axes of a [T, H, W, C] array.

    Works in either direction per axis; same-size axes are untouched.
    """
    if x.ndim != 4:
        raise ResampleError(f"expected a [T, H, W, C] array, got shape {x.shape}")
    y = x
    for axis, target in enumerate(shape):
        if y.shape[axis] != target:
            y = _apply_axis(y, interp_matrix(y.shape[axis], target), axis)
    return np.ascontiguousarray(y)


def resize_linear_adjoint(dy: np.ndarray, in_shape: tuple[int, int, int]) -> np.ndarray:
    """Exact adjoint of resize_linear(x, out_shape) for x of shape in_shape.

    Applies the transposed per-axis matrices in reverse order, so
    <resize(x), dy> == <x, adjoint(dy)> to round-off.
    """
    if dy.ndim != 4:
        raise ResampleError(f"expected a [T, H, W, C] array, got shape {dy.shape}")
    x = dy
    for axis in reversed(range(3)):
        target = in_shape[axis]
        if x.shape[axis] != target:
            x = _apply_axis(x, interp_matrix(target, x.shape[axis]).T, axis)
    return np.ascontiguousarray(x)


def select_frames(x: np.ndarray, stride: int) -> np.ndarray:
    """Keep frames {0, s, 2s, ...}; the temporal half of downsampling."""
    if stride < 1:
        raise ResampleError(f"stride must be positive, got {stride}")
    return x[::stride]


def downsample(video: VideoTensor, spec: ScaleSpec) -> VideoTensor:
    """Project a training slice onto a coarser scale.

    Frames are selected at the spec's stride (no temporal blending), then the
    spatial axes are resized with bilinear weights.
    """
    span = (spec.frames - 1) * spec.temporal_stride + 1
    if video.frames < span:
        raise ResampleError(
            f"need {span} source frames for {spec.frames} at stride {spec.temporal_stride}, "
            f"got {video.frames}"
        )
    if spec.height > video.height or spec.width > video.width:
        raise ResampleError(
            f"downsample target {spec.height}x{spec.width} exceeds source "
            f"{video.height}x{video.width}"
        )
    frames = select_frames(video.data, spec.temporal_stride)[: spec.frames]
    out = resize_linear(frames, (spec.frames, spec.height, spec.width))
    return VideoTensor(out, fps=video.fps / spec.temporal_stride)


def upsample(video: VideoTensor, spec: ScaleSpec) -> VideoTensor:
    """Lift a clip to a finer scale with trilinear interpolation."""
    if (
        spec.frames < video.frames
        or spec.height < video.height
        or spec.width < video.width
    ):
        raise ResampleError(
            f"upsample target {spec.volume_shape} is smaller than source {video.volume_shape}"
        )
    out = resize_linear(video.data, spec.volume_shape)
    fps = video.fps * (spec.frames / video.frames)
    return VideoTensor(out, fps=fps)
