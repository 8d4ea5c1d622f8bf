"""Round trips and rejection paths for clip I/O."""
from __future__ import annotations

import json

import numpy as np
import pytest
from PIL import Image

from patchgen.core import VideoTensor
from patchgen.errors import DataError
from patchgen.videoio import (
    load_clip,
    load_frames,
    load_image,
    load_raw,
    save_clip,
    save_frames,
    save_raw,
)


def random_clip(seed=0, shape=(3, 6, 5, 3), fps=30.0) -> VideoTensor:
    rng = np.random.default_rng(seed)
    return VideoTensor(rng.uniform(-1, 1, size=shape), fps=fps)


def test_frame_round_trip_within_quantization(tmp_path):
    clip = random_clip()
    save_frames(clip, tmp_path / "clip")
    back = load_frames(tmp_path / "clip")
    assert back.fps == clip.fps
    assert back.data.shape == clip.data.shape
    assert np.max(np.abs(back.data - clip.data)) <= 1.0 / 255.0


def test_frame_round_trip_is_exact_on_quantized_values(tmp_path):
    # values already on the 8-bit grid survive a second round trip untouched
    clip = random_clip(1)
    save_frames(clip, tmp_path / "a")
    once = load_frames(tmp_path / "a")
    save_frames(once, tmp_path / "b")
    twice = load_frames(tmp_path / "b")
    np.testing.assert_array_equal(once.data, twice.data)


def test_grayscale_frame_round_trip(tmp_path):
    clip = random_clip(2, shape=(2, 4, 4, 1))
    save_frames(clip, tmp_path / "gray")
    back = load_frames(tmp_path / "gray")
    assert back.channels == 1
    assert np.max(np.abs(back.data - clip.data)) <= 1.0 / 255.0


def test_raw_round_trip_is_bit_exact(tmp_path):
    clip = random_clip(3, fps=17.5)
    save_raw(clip, tmp_path / "clip.pgv")
    back = load_raw(tmp_path / "clip.pgv")
    assert back.fps == 17.5
    np.testing.assert_array_equal(back.data, clip.data)


def test_load_clip_dispatches_by_kind(tmp_path):
    clip = random_clip(4)
    save_clip(clip, tmp_path / "frames")
    assert load_clip(tmp_path / "frames").data.shape == clip.data.shape
    save_clip(clip, tmp_path / "raw.pgv")
    np.testing.assert_array_equal(load_clip(tmp_path / "raw.pgv").data, clip.data)

    img = Image.fromarray(np.full((5, 7, 3), 128, dtype=np.uint8))
    img.save(tmp_path / "single.png")
    loaded = load_clip(tmp_path / "single.png")
    assert loaded.frames == 1 and loaded.height == 5 and loaded.width == 7


def test_load_image_grayscale(tmp_path):
    Image.fromarray(np.full((4, 4), 200, dtype=np.uint8)).save(tmp_path / "g.png")
    loaded = load_image(tmp_path / "g.png", channels=1)
    assert loaded.channels == 1 and loaded.frames == 1


def test_rejects_bad_inputs(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_clip(tmp_path / "missing.pgv")
    (tmp_path / "junk.pgv").write_bytes(b"not a container")
    with pytest.raises(DataError, match="raw clip"):
        load_raw(tmp_path / "junk.pgv")
    (tmp_path / "note.txt").write_text("hello")
    with pytest.raises(DataError, match="cannot tell"):
        load_clip(tmp_path / "note.txt")
    with pytest.raises(DataError, match="meta.json"):
        load_frames(tmp_path)


def test_rejects_truncated_and_inconsistent_artifacts(tmp_path):
    clip = random_clip(5)
    save_raw(clip, tmp_path / "clip.pgv")
    blob = (tmp_path / "clip.pgv").read_bytes()
    (tmp_path / "short.pgv").write_bytes(blob[:-16])
    with pytest.raises(DataError, match="payload"):
        load_raw(tmp_path / "short.pgv")

    save_frames(clip, tmp_path / "frames")
    (tmp_path / "frames" / "frame_000001.png").unlink()
    with pytest.raises(DataError, match="missing frame"):
        load_frames(tmp_path / "frames")

    save_frames(clip, tmp_path / "frames2")
    meta = json.loads((tmp_path / "frames2" / "meta.json").read_text())
    meta["height"] = 99
    (tmp_path / "frames2" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(DataError, match="metadata says"):
        load_frames(tmp_path / "frames2")

    bad = dict(meta)
    del bad["fps"]
    (tmp_path / "frames2" / "meta.json").write_text(json.dumps(bad))
    with pytest.raises(DataError, match="incomplete metadata"):
        load_frames(tmp_path / "frames2")
