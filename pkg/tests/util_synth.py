"""Synthetic training material shared by the end-to-end tests."""
from __future__ import annotations

import numpy as np

from patchgen.core import VideoTensor


def moving_square_clip(frames: int = 13, height: int = 24, width: int = 32) -> VideoTensor:
    """A bright square drifting over a shaded background, wrapping around."""
    data = np.empty((frames, height, width, 3))
    xx = np.arange(width) / width
    base = -0.6 + 0.25 * xx
    side = 6
    for t in range(frames):
        data[t, :, :, 0] = base
        data[t, :, :, 1] = base * 0.8
        data[t, :, :, 2] = base * 1.1
        y = (2 + t) % (height - side)
        x = (3 + 2 * t) % (width - side)
        data[t, y : y + side, x : x + side] = [0.8, 0.2, -0.2]
    return VideoTensor(np.clip(data, -1.0, 1.0))
