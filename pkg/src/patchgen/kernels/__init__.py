"""Conv3d hot kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen by the PATCHGEN_BACKEND environment variable ("numba"
or "numpy"), read at import time; set_backend switches at runtime. With no
request, numba is used when importable and numpy otherwise. Both backends
are individually deterministic and agree to float round-off (~1e-12); pick
one backend and results are bit-reproducible.

Array conventions: activations [T, H, W, C] float64 C-contiguous, weights
[kt, kh, kw, Cin, Cout], odd kernel, stride 1, zero 'same' padding.
"""
from __future__ import annotations

import os

import numpy as np

from ..errors import ConfigError
from . import numpy_backend

try:
    from . import numba_backend

    HAS_NUMBA = True
except ImportError:  # numba not installed
    numba_backend = None
    HAS_NUMBA = False

_BACKENDS = {"numpy": numpy_backend, "numba": numba_backend}
_active_name = "numpy"
_active = numpy_backend


def available_backends() -> tuple[str, ...]:
    return ("numpy", "numba") if HAS_NUMBA else ("numpy",)


def set_backend(name: str) -> None:
    """Select the compute backend by name; raises ConfigError if unusable."""
    global _active_name, _active
    if name not in _BACKENDS:
        raise ConfigError(f"unknown backend '{name}', expected one of {sorted(_BACKENDS)}")
    if _BACKENDS[name] is None:
        raise ConfigError(f"backend '{name}' requested but numba is not importable")
    _active_name, _active = name, _BACKENDS[name]


def get_backend() -> str:
    return _active_name


def _as_input(x: np.ndarray) -> np.ndarray:
    if x.dtype != np.float64 or not x.flags["C_CONTIGUOUS"]:
        x = np.ascontiguousarray(x, dtype=np.float64)
    return x


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 conv3d: [T,H,W,Ci] x [kt,kh,kw,Ci,Co] -> [T,H,W,Co]."""
    return _active.conv3d_forward(_as_input(x), _as_input(w), _as_input(b))


def conv3d_weight_grad(x: np.ndarray, dy: np.ndarray, kernel: tuple[int, int, int]) -> np.ndarray:
    """Weight gradient for conv3d_forward. dy is [T,H,W,Co]."""
    kt, kh, kw = kernel
    return _active.conv3d_weight_grad(_as_input(x), _as_input(dy), kt, kh, kw)


def conv3d_input_grad(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Input gradient: convolution of dy with the flipped, channel-swapped kernel."""
    w_flip = np.ascontiguousarray(w[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3))
    zero = np.zeros(w_flip.shape[4])
    return _active.conv3d_forward(_as_input(dy), w_flip, zero)


_requested = os.environ.get("PATCHGEN_BACKEND", "").strip().lower()
if _requested:
    set_backend(_requested)
elif HAS_NUMBA:
    set_backend("numba")
