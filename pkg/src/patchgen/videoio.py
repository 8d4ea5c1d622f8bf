"""Clip I/O: 8-bit frame directories, raw float volumes, single images.

The frame-directory format is the correctness surface: losslessly compressed
PNG frames plus a small metadata record, so round trips are exact up to 8-bit
quantization and need no codec stack. The raw container keeps full float64
precision for tests and intermediate artifacts.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import VideoTensor
from .errors import DataError

META_NAME = "meta.json"
RAW_SUFFIX = ".pgv"
_RAW_MAGIC = b"PGVRAW01"

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


def _quantize(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((data + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _dequantize(q: np.ndarray) -> np.ndarray:
    return q.astype(np.float64) / 127.5 - 1.0


def save_frames(video: VideoTensor, directory: str | Path) -> Path:
    """Write a clip as numbered PNG frames plus a metadata record."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    q = _quantize(video.data)
    for t in range(video.frames):
        frame = q[t, :, :, 0] if video.channels == 1 else q[t]
        Image.fromarray(frame).save(directory / f"frame_{t:06d}.png")
    meta = {
        "fps": video.fps,
        "frames": video.frames,
        "height": video.height,
        "width": video.width,
        "channels": video.channels,
    }
    (directory / META_NAME).write_text(json.dumps(meta, indent=2))
    return directory


def load_frames(directory: str | Path) -> VideoTensor:
    """Read a frame directory written by save_frames."""
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.exists():
        raise DataError(f"no {META_NAME} in {directory}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt {meta_path}: {exc}") from exc
    try:
        frames, height = int(meta["frames"]), int(meta["height"])
        width, channels = int(meta["width"]), int(meta["channels"])
        fps = float(meta["fps"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"incomplete metadata in {meta_path}: {exc}") from exc

    data = np.empty((frames, height, width, channels), dtype=np.uint8)
    for t in range(frames):
        path = directory / f"frame_{t:06d}.png"
        if not path.exists():
            raise DataError(f"missing frame file {path}")
        arr = np.asarray(_open_image(path, channels))
        if arr.shape[:2] != (height, width):
            raise DataError(
                f"{path}: frame is {arr.shape[1]}x{arr.shape[0]}, "
                f"metadata says {width}x{height}"
            )
        data[t] = arr.reshape(height, width, channels)
    return VideoTensor(_dequantize(data), fps=fps)


def _open_image(path: Path, channels: int) -> Image.Image:
    try:
        img = Image.open(path)
        return img.convert("L" if channels == 1 else "RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def save_raw(video: VideoTensor, path: str | Path) -> Path:
    """Full-precision container: magic, dims, fps, row-major float64 data."""
    path = Path(path)
    header = struct.pack(
        "<8sIIIId",
        _RAW_MAGIC,
        video.frames,
        video.height,
        video.width,
        video.channels,
        video.fps,
    )
    path.write_bytes(header + np.ascontiguousarray(video.data).tobytes())
    return path


def load_raw(path: str | Path) -> VideoTensor:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    head = struct.calcsize("<8sIIIId")
    if len(blob) < head or blob[:8] != _RAW_MAGIC:
        raise DataError(f"{path} is not a raw clip container")
    _, t, h, w, c, fps = struct.unpack("<8sIIIId", blob[:head])
    expected = t * h * w * c * 8
    if len(blob) - head != expected:
        raise DataError(
            f"{path}: payload is {len(blob) - head} bytes, header implies {expected}"
        )
    data = np.frombuffer(blob, dtype=np.float64, offset=head).reshape(t, h, w, c)
    return VideoTensor(data.copy(), fps=fps)


def load_image(path: str | Path, channels: int = 3) -> VideoTensor:
    """A single image as a 1-frame clip."""
    img = _open_image(Path(path), channels)
    arr = np.asarray(img).reshape(img.height, img.width, channels)
    return VideoTensor(_dequantize(arr)[np.newaxis])


def load_clip(path: str | Path) -> VideoTensor:
    """Load any supported input: frame directory, raw container, or image."""
    path = Path(path)
    if path.is_dir():
        return load_frames(path)
    if not path.exists():
        raise DataError(f"input {path} does not exist")
    if path.suffix.lower() == RAW_SUFFIX:
        return load_raw(path)
    if path.suffix.lower() in IMAGE_SUFFIXES:
        return load_image(path)
    raise DataError(
        f"cannot tell what {path} is; expected a frame directory, a {RAW_SUFFIX} "
        "container, or an image file"
    )


def save_clip(video: VideoTensor, path: str | Path) -> Path:
    """Save to a frame directory, or a raw container if the suffix asks."""
    path = Path(path)
    if path.suffix.lower() == RAW_SUFFIX:
        return save_raw(video, path)
    return save_frames(video, path)
