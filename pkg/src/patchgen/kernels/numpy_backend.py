"""Pure-numpy conv3d kernels (im2col windows + BLAS tensordot)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _padded(x: np.ndarray, kt: int, kh: int, kw: int) -> np.ndarray:
    return np.pad(x, ((kt // 2,) * 2, (kh // 2,) * 2, (kw // 2,) * 2, (0, 0)))


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded 3-d convolution. x [T,H,W,Ci], w [kt,kh,kw,Ci,Co], b [Co]."""
    kt, kh, kw = w.shape[:3]
    win = sliding_window_view(_padded(x, kt, kh, kw), (kt, kh, kw), axis=(0, 1, 2))
    # win is [T,H,W,Ci,kt,kh,kw]; contract the window and input-channel axes
    return np.tensordot(win, w, axes=([4, 5, 6, 3], [0, 1, 2, 3])) + b


def conv3d_weight_grad(x: np.ndarray, dy: np.ndarray, kt: int, kh: int, kw: int) -> np.ndarray:
    """d(loss)/d(w) for conv3d_forward given upstream dy [T,H,W,Co]."""
    win = sliding_window_view(_padded(x, kt, kh, kw), (kt, kh, kw), axis=(0, 1, 2))
    dw = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2]))  # [Ci,kt,kh,kw,Co]
    return np.ascontiguousarray(dw.transpose(1, 2, 3, 0, 4))
