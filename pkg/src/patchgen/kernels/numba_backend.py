"""Numba-compiled conv3d kernels.

Loops are ordered so each parallel slot owns a disjoint output slice: results
are bit-identical regardless of thread count. fastmath stays off so each
element's accumulation order is exactly the written loop order (it need not
match the numpy backend's BLAS order; parity holds to ~1e-12).
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def conv3d_forward(x, w, b):
    T, H, W, Ci = x.shape
    kt, kh, kw, _, Co = w.shape
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    y = np.empty((T, H, W, Co))
    for t in prange(T):
        for i in range(H):
            for j in range(W):
                for co in range(Co):
                    y[t, i, j, co] = b[co]
                for a in range(kt):
                    t2 = t + a - pt
                    if t2 < 0 or t2 >= T:
                        continue
                    for bb in range(kh):
                        i2 = i + bb - ph
                        if i2 < 0 or i2 >= H:
                            continue
                        for cc in range(kw):
                            j2 = j + cc - pw
                            if j2 < 0 or j2 >= W:
                                continue
                            for ci in range(Ci):
                                xv = x[t2, i2, j2, ci]
                                for co in range(Co):
                                    y[t, i, j, co] += xv * w[a, bb, cc, ci, co]
    return y


@njit(parallel=True, cache=True)
def conv3d_weight_grad(x, dy, kt, kh, kw):
    T, H, W, Ci = x.shape
    Co = dy.shape[3]
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    dw = np.zeros((kt, kh, kw, Ci, Co))
    # each slot owns one kernel offset: disjoint writes, cache-resident acc
    for idx in prange(kt * kh * kw):
        a = idx // (kh * kw)
        bb = (idx // kw) % kh
        cc = idx % kw
        acc = np.zeros((Ci, Co))
        for t in range(max(0, pt - a), min(T, T + pt - a)):
            t2 = t + a - pt
            for i in range(max(0, ph - bb), min(H, H + ph - bb)):
                i2 = i + bb - ph
                for j in range(max(0, pw - cc), min(W, W + pw - cc)):
                    j2 = j + cc - pw
                    for ci in range(Ci):
                        xv = x[t2, i2, j2, ci]
                        for co in range(Co):
                            acc[ci, co] += xv * dy[t, i, j, co]
        dw[a, bb, cc] = acc
    return dw
