"""Conv3d kernel correctness: orientation, adjoint identities, backend parity."""
from __future__ import annotations

import numpy as np
import pytest

from patchgen import kernels
from patchgen.errors import ConfigError
from patchgen.kernels import (
    HAS_NUMBA,
    conv3d_forward,
    conv3d_input_grad,
    conv3d_weight_grad,
    numpy_backend,
)

SHAPES = [
    ((2, 4, 4, 1), (3, 3, 3, 1, 2)),
    ((1, 5, 7, 3), (3, 3, 3, 3, 4)),  # single frame, non-square
    ((4, 2, 2, 2), (3, 3, 3, 2, 2)),  # spatial size below kernel
    ((3, 4, 5, 2), (1, 1, 1, 2, 3)),  # pointwise
    ((2, 3, 3, 2), (1, 3, 3, 2, 2)),  # spatial-only kernel
]


def test_pointwise_kernel_is_matrix_product():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(1, 1, 1, 5, 6))
    b = rng.normal(size=6)
    y = conv3d_forward(x, w, b)
    np.testing.assert_allclose(y, x @ w[0, 0, 0] + b, atol=1e-12)


def test_delta_input_stamps_flipped_kernel():
    # a unit impulse at voxel v must write w reversed around v
    w = np.arange(27, dtype=float).reshape(3, 3, 3, 1, 1)
    x = np.zeros((5, 5, 5, 1))
    x[2, 2, 2, 0] = 1.0
    y = conv3d_forward(x, w, np.zeros(1))
    for dt in (-1, 0, 1):
        for dh in (-1, 0, 1):
            for dw_ in (-1, 0, 1):
                # y[v + d] sees the tap at kernel index (pad - d)
                expected = w[1 - dt, 1 - dh, 1 - dw_, 0, 0]
                assert y[2 + dt, 2 + dh, 2 + dw_, 0] == expected


def test_zero_padding_at_borders():
    x = np.ones((1, 2, 2, 1))
    w = np.ones((3, 3, 3, 1, 1))
    y = conv3d_forward(x, w, np.zeros(1))
    # corner position sees only the 1x2x2 in-bounds block
    assert y[0, 0, 0, 0] == 4.0


@pytest.mark.parametrize("xshape,wshape", SHAPES)
def test_input_grad_is_adjoint(xshape, wshape):
    rng = np.random.default_rng(1)
    x = rng.normal(size=xshape)
    w = rng.normal(size=wshape)
    dy = rng.normal(size=xshape[:3] + (wshape[4],))
    lhs = float(np.sum(conv3d_forward(x, w, np.zeros(wshape[4])) * dy))
    rhs = float(np.sum(x * conv3d_input_grad(dy, w)))
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("xshape,wshape", SHAPES)
def test_weight_grad_is_adjoint(xshape, wshape):
    rng = np.random.default_rng(2)
    x = rng.normal(size=xshape)
    w = rng.normal(size=wshape)
    dy = rng.normal(size=xshape[:3] + (wshape[4],))
    dw = conv3d_weight_grad(x, dy, wshape[:3])
    assert dw.shape == wshape
    lhs = float(np.sum(conv3d_forward(x, w, np.zeros(wshape[4])) * dy))
    rhs = float(np.sum(w * dw))
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("xshape,wshape", SHAPES)
def test_backends_agree(xshape, wshape):
    from patchgen.kernels import numba_backend

    rng = np.random.default_rng(3)
    x = rng.normal(size=xshape)
    w = rng.normal(size=wshape)
    b = rng.normal(size=wshape[4])
    dy = rng.normal(size=xshape[:3] + (wshape[4],))
    kt, kh, kw = wshape[:3]
    np.testing.assert_allclose(
        numba_backend.conv3d_forward(x, w, b),
        numpy_backend.conv3d_forward(x, w, b),
        rtol=1e-12,
        atol=1e-12,
    )
    np.testing.assert_allclose(
        numba_backend.conv3d_weight_grad(x, dy, kt, kh, kw),
        numpy_backend.conv3d_weight_grad(x, dy, kt, kh, kw),
        rtol=1e-12,
        atol=1e-12,
    )


def test_backend_selection():
    current = kernels.get_backend()
    try:
        kernels.set_backend("numpy")
        assert kernels.get_backend() == "numpy"
        with pytest.raises(ConfigError, match="unknown backend"):
            kernels.set_backend("torch")
        if HAS_NUMBA:
            kernels.set_backend("numba")
            assert kernels.get_backend() == "numba"
    finally:
        kernels.set_backend(current)


def test_float32_inputs_are_upcast():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 3, 2)).astype(np.float32)
    w = rng.normal(size=(3, 3, 3, 2, 2)).astype(np.float32)
    y = conv3d_forward(x, w, np.zeros(2, dtype=np.float32))
    assert y.dtype == np.float64
