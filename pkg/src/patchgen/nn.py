"""Hand-rolled network building blocks with explicit backward passes.

There is no autodiff here: every layer's gradient is written out and verified
against central finite differences in the tests. Forward passes return caches;
backward passes consume them, accumulate parameter gradients in place, and
return the input gradient.

Conventions: activations are [T, H, W, C] float64, weights [kt, kh, kw, Ci, Co].
Spectral-norm power iterations never run inside forward(); training code calls
power_iterate() once per optimization step so that every forward within a step
(and every finite-difference probe) sees the same u, v vectors.
"""
from __future__ import annotations

import numpy as np

from .kernels import conv3d_forward, conv3d_input_grad, conv3d_weight_grad

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
INIT_STD = 0.02
_TINY = 1e-12

LOGVAR_MIN, LOGVAR_MAX = -20.0, 10.0  # encoder log-variance clamp


# ---------------------------------------------------------------------------
# layer functions


def leaky_mask(pre: np.ndarray) -> np.ndarray:
    """Pointwise derivative of LeakyReLU at pre-activation values."""
    return np.where(pre >= 0.0, 1.0, LEAKY_SLOPE)


def sn_iterate(w: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One power iteration on the [R, Co] matricized weight; returns (u, v)."""
    m = w.reshape(-1, w.shape[-1])
    v = m @ u
    v /= np.linalg.norm(v) + _TINY
    u = m.T @ v
    u /= np.linalg.norm(u) + _TINY
    return u, v


def sn_sigma(w: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """Spectral-norm estimate v @ W @ u for the stored singular vectors."""
    m = w.reshape(-1, w.shape[-1])
    return max(float(v @ (m @ u)), _TINY)


def bn_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    rm: np.ndarray,
    rv: np.ndarray,
    training: bool,
    update_stats: bool,
):
    """BatchNorm over all non-channel axes of a single clip.

    Training mode normalizes with batch statistics (population variance);
    eval mode uses the running buffers. Running stats update only when
    update_stats is set, so probe passes stay side-effect free.
    """
    axes = (0, 1, 2)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        istd = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * istd
        if update_stats:
            n = x.size // x.shape[3]
            unbiased = var * (n / (n - 1)) if n > 1 else var
            rm *= 1.0 - BN_MOMENTUM
            rm += BN_MOMENTUM * mean
            rv *= 1.0 - BN_MOMENTUM
            rv += BN_MOMENTUM * unbiased
    else:
        istd = 1.0 / np.sqrt(rv + BN_EPS)
        xhat = (x - rm) * istd
    y = gamma * xhat + beta
    cache = (xhat, istd, gamma, training)
    return y, cache


def bn_backward(dy: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dgamma, dbeta)."""
    xhat, istd, gamma, training = cache
    axes = (0, 1, 2)
    dgamma = np.sum(dy * xhat, axis=axes)
    dbeta = np.sum(dy, axis=axes)
    dxhat = dy * gamma
    if not training:
        return dxhat * istd, dgamma, dbeta
    n = dy.size // dy.shape[3]
    dx = (istd / n) * (
        n * dxhat - np.sum(dxhat, axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes)
    )
    return dx, dgamma, dbeta


def init_conv(rng: np.random.Generator, kernel: int, cin: int, cout: int):
    w = rng.normal(0.0, INIT_STD, size=(kernel, kernel, kernel, cin, cout))
    return w, np.zeros(cout)


# ---------------------------------------------------------------------------
# parameter container


class Network:
    """Named parameter/buffer store shared by all three network types."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        self.buffers[name] = np.asarray(value, dtype=np.float64)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of params and buffers, for serialization."""
        out = {f"p:{k}": v for k, v in self.params.items()}
        out.update({f"b:{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for key, value in arrays.items():
            kind, _, name = key.partition(":")
            store = self.params if kind == "p" else self.buffers
            if name not in store:
                raise KeyError(f"unexpected state entry {key!r}")
            if store[name].shape != value.shape:
                raise ValueError(f"shape mismatch for {key!r}")
            store[name][...] = value

    def state_bytes(self) -> bytes:
        """Raw bytes of all params and buffers; equality means bit-identity."""
        arrays = self.state_arrays()
        return b"".join(
            key.encode() + np.ascontiguousarray(arrays[key]).tobytes() for key in sorted(arrays)
        )

    def flatten_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def load_flat_params(self, vec: np.ndarray) -> None:
        pos = 0
        for k in sorted(self.params):
            p = self.params[k]
            p[...] = vec[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def flatten_grads(self) -> np.ndarray:
        return np.concatenate([self.grads[k].ravel() for k in sorted(self.grads)])


def copy_matching_state(src: Network, dst: Network) -> list[str]:
    """Copy params and buffers whose name and shape match; returns copied names."""
    copied = []
    for name, value in src.params.items():
        if name in dst.params and dst.params[name].shape == value.shape:
            dst.params[name][...] = value
            copied.append(name)
    for name, value in src.buffers.items():
        if name in dst.buffers and dst.buffers[name].shape == value.shape:
            dst.buffers[name][...] = value
            copied.append(name)
    return copied


# ---------------------------------------------------------------------------
# spectral-norm conv pieces shared by Encoder and Critic


def _sn_conv_forward(net: Network, name: str, x: np.ndarray):
    w = net.params[f"{name}.w"]
    u, v = net.buffers[f"{name}.u"], net.buffers[f"{name}.v"]
    sigma = sn_sigma(w, u, v)
    wbar = w / sigma
    y = conv3d_forward(x, wbar, net.params[f"{name}.b"])
    return y, (x, wbar, sigma, name)


def _sn_raw_grad(net: Network, name: str, dwbar: np.ndarray, wbar: np.ndarray, sigma: float):
    u, v = net.buffers[f"{name}.u"], net.buffers[f"{name}.v"]
    coef = float(np.sum(dwbar * wbar))
    dsigma_dw = np.outer(v, u).reshape(wbar.shape)
    return (dwbar - coef * dsigma_dw) / sigma


def _sn_conv_backward(net: Network, cache, dy: np.ndarray, accumulate: bool) -> np.ndarray:
    x, wbar, sigma, name = cache
    if accumulate:
        dwbar = conv3d_weight_grad(x, dy, wbar.shape[:3])
        net.grads[f"{name}.w"] += _sn_raw_grad(net, name, dwbar, wbar, sigma)
        net.grads[f"{name}.b"] += dy.sum(axis=(0, 1, 2))
    return conv3d_input_grad(dy, wbar)


def _add_sn_conv(net: Network, rng: np.random.Generator, name: str, kernel: int, cin: int, cout: int):
    w, b = init_conv(rng, kernel, cin, cout)
    net.add_param(f"{name}.w", w)
    net.add_param(f"{name}.b", b)
    u = rng.normal(size=cout)
    u /= np.linalg.norm(u) + _TINY
    net.add_buffer(f"{name}.u", u)
    net.add_buffer(f"{name}.v", np.zeros(w.size // cout))


class _SpectralNet(Network):
    """Shared power-iteration entry point for nets with spectral-norm convs."""

    sn_names: list[str]

    def power_iterate(self, iterations: int = 1) -> None:
        for name in self.sn_names:
            w = self.params[f"{name}.w"]
            u = self.buffers[f"{name}.u"]
            for _ in range(iterations):
                u, v = sn_iterate(w, u)
            self.buffers[f"{name}.u"][...] = u
            self.buffers[f"{name}.v"][...] = v


# ---------------------------------------------------------------------------
# the three network types


class Encoder(_SpectralNet):
    """Patch encoder: spectral-norm conv trunk + separate mean/log-var heads.

    The mean path crosses (blocks - 1) trunk convs plus one head conv, so its
    receptive field is 1 + blocks * (kernel - 1) per axis. The log variance is
    clamped to [LOGVAR_MIN, LOGVAR_MAX]; the clamp zeroes the gradient outside.
    """

    def __init__(self, rng: np.random.Generator, in_channels: int, channels: int, latent_dim: int, blocks: int, kernel: int):
        super().__init__()
        self.blocks = blocks
        self.kernel = kernel
        self.sn_names = []
        cin = in_channels
        for i in range(blocks - 1):
            _add_sn_conv(self, rng, f"t{i}", kernel, cin, channels)
            self.sn_names.append(f"t{i}")
            cin = channels
        for head in ("mu", "logv"):
            w, b = init_conv(rng, kernel, cin, latent_dim)
            self.add_param(f"{head}.w", w)
            self.add_param(f"{head}.b", b)
        self.power_iterate()

    def forward(self, x: np.ndarray):
        caches = []
        h = x
        for i in range(self.blocks - 1):
            pre, c = _sn_conv_forward(self, f"t{i}", h)
            mask = leaky_mask(pre)
            caches.append((c, mask))
            h = np.where(pre >= 0.0, pre, LEAKY_SLOPE * pre)
        mu = conv3d_forward(h, self.params["mu.w"], self.params["mu.b"])
        logv_raw = conv3d_forward(h, self.params["logv.w"], self.params["logv.b"])
        logv = np.clip(logv_raw, LOGVAR_MIN, LOGVAR_MAX)
        clamp_mask = ((logv_raw > LOGVAR_MIN) & (logv_raw < LOGVAR_MAX)).astype(np.float64)
        return mu, logv, (caches, h, clamp_mask)

    def backward(self, dmu: np.ndarray, dlogv: np.ndarray, cache, accumulate: bool = True) -> np.ndarray:
        caches, h, clamp_mask = cache
        dlogv = dlogv * clamp_mask
        if accumulate:
            self.grads["mu.w"] += conv3d_weight_grad(h, dmu, self.params["mu.w"].shape[:3])
            self.grads["mu.b"] += dmu.sum(axis=(0, 1, 2))
            self.grads["logv.w"] += conv3d_weight_grad(h, dlogv, self.params["logv.w"].shape[:3])
            self.grads["logv.b"] += dlogv.sum(axis=(0, 1, 2))
        dh = conv3d_input_grad(dmu, self.params["mu.w"]) + conv3d_input_grad(
            dlogv, self.params["logv.w"]
        )
        for c, mask in reversed(caches):
            dh = _sn_conv_backward(self, c, dh * mask, accumulate)
        return dh


class Generator(Network):
    """Residual patch generator: conv+BN+LeakyReLU blocks with a conv+tanh tail."""

    def __init__(self, rng: np.random.Generator, in_channels: int, out_channels: int, channels: int, blocks: int, kernel: int):
        super().__init__()
        self.blocks = blocks
        self.kernel = kernel
        cin = in_channels
        for i in range(blocks - 1):
            w, b = init_conv(rng, kernel, cin, channels)
            self.add_param(f"b{i}.w", w)
            self.add_param(f"b{i}.b", b)
            self.add_param(f"b{i}.gamma", rng.normal(1.0, INIT_STD, size=channels))
            self.add_param(f"b{i}.beta", np.zeros(channels))
            self.add_buffer(f"b{i}.rm", np.zeros(channels))
            self.add_buffer(f"b{i}.rv", np.ones(channels))
            cin = channels
        w, b = init_conv(rng, kernel, cin, out_channels)
        self.add_param("out.w", w)
        self.add_param("out.b", b)

    def forward(self, x: np.ndarray, training: bool, update_stats: bool | None = None):
        if update_stats is None:
            update_stats = training
        caches = []
        h = x
        for i in range(self.blocks - 1):
            name = f"b{i}"
            pre = conv3d_forward(h, self.params[f"{name}.w"], self.params[f"{name}.b"])
            normed, bn_cache = bn_forward(
                pre,
                self.params[f"{name}.gamma"],
                self.params[f"{name}.beta"],
                self.buffers[f"{name}.rm"],
                self.buffers[f"{name}.rv"],
                training,
                update_stats,
            )
            mask = leaky_mask(normed)
            caches.append((h, bn_cache, mask))
            h = np.where(normed >= 0.0, normed, LEAKY_SLOPE * normed)
        pre = conv3d_forward(h, self.params["out.w"], self.params["out.b"])
        y = np.tanh(pre)
        caches.append((h, y))
        return y, caches

    def calibrate(self, inputs: list[np.ndarray]) -> None:
        """Pin the BN running buffers to the statistics of reference inputs.

        Buffers are set outright, not blended: an eval-mode forward over the
        same single input then normalizes exactly like a training-mode pass.
        Later layers are pinned under the earlier layers' already-pinned
        normalization, matching what eval will compute. Population variance
        is stored; the buffers must reproduce the batch normalizer, not
        estimate a wider population.
        """
        hs = list(inputs)
        axes = (0, 1, 2)
        for i in range(self.blocks - 1):
            name = f"b{i}"
            pres = [conv3d_forward(h, self.params[f"{name}.w"], self.params[f"{name}.b"]) for h in hs]
            if len(pres) == 1:
                mean = pres[0].mean(axis=axes)
                var = pres[0].var(axis=axes)
            else:
                total = sum(p.size // p.shape[3] for p in pres)
                mean = sum(p.sum(axis=axes) for p in pres) / total
                var = sum(((p - mean) ** 2).sum(axis=axes) for p in pres) / total
            self.buffers[f"{name}.rm"][...] = mean
            self.buffers[f"{name}.rv"][...] = var
            nexts = []
            for p in pres:
                normed, _ = bn_forward(
                    p,
                    self.params[f"{name}.gamma"],
                    self.params[f"{name}.beta"],
                    self.buffers[f"{name}.rm"],
                    self.buffers[f"{name}.rv"],
                    False,
                    False,
                )
                nexts.append(np.where(normed >= 0.0, normed, LEAKY_SLOPE * normed))
            hs = nexts

    def backward(self, dy: np.ndarray, caches, accumulate: bool = True) -> np.ndarray:
        h_last, y = caches[-1]
        dpre = dy * (1.0 - y * y)
        if accumulate:
            self.grads["out.w"] += conv3d_weight_grad(h_last, dpre, self.params["out.w"].shape[:3])
            self.grads["out.b"] += dpre.sum(axis=(0, 1, 2))
        dh = conv3d_input_grad(dpre, self.params["out.w"])
        for i in reversed(range(self.blocks - 1)):
            name = f"b{i}"
            h_in, bn_cache, mask = caches[i]
            dnormed = dh * mask
            dpre, dgamma, dbeta = bn_backward(dnormed, bn_cache)
            if accumulate:
                self.grads[f"{name}.gamma"] += dgamma
                self.grads[f"{name}.beta"] += dbeta
                self.grads[f"{name}.w"] += conv3d_weight_grad(
                    h_in, dpre, self.params[f"{name}.w"].shape[:3]
                )
                self.grads[f"{name}.b"] += dpre.sum(axis=(0, 1, 2))
            dh = conv3d_input_grad(dpre, self.params[f"{name}.w"])
        return dh


class Critic(_SpectralNet):
    """Patch critic: spectral-norm convs, LeakyReLU, 1-channel linear score map."""

    def __init__(self, rng: np.random.Generator, in_channels: int, channels: int, blocks: int, kernel: int):
        super().__init__()
        self.blocks = blocks
        self.kernel = kernel
        self.sn_names = []
        cin = in_channels
        for i in range(blocks):
            cout = 1 if i == blocks - 1 else channels
            _add_sn_conv(self, rng, f"b{i}", kernel, cin, cout)
            self.sn_names.append(f"b{i}")
            cin = cout
        self.power_iterate()

    def forward(self, x: np.ndarray):
        caches = []
        h = x
        for i in range(self.blocks):
            pre, c = _sn_conv_forward(self, f"b{i}", h)
            if i == self.blocks - 1:
                caches.append((c, None))
                h = pre
            else:
                mask = leaky_mask(pre)
                caches.append((c, mask))
                h = np.where(pre >= 0.0, pre, LEAKY_SLOPE * pre)
        return h, caches

    def _reverse(self, dscore: np.ndarray, caches, accumulate: bool) -> np.ndarray:
        dh = dscore
        for c, mask in reversed(caches):
            if mask is not None:
                dh = dh * mask
            dh = _sn_conv_backward(self, c, dh, accumulate)
        return dh

    def backward(self, dscore: np.ndarray, caches, accumulate: bool = True) -> np.ndarray:
        return self._reverse(dscore, caches, accumulate)

    def input_grad(self, dscore: np.ndarray, caches) -> np.ndarray:
        return self._reverse(dscore, caches, accumulate=False)

    def penalty_grads(self, x_mix: np.ndarray, gp_weight: float, accumulate: bool = True) -> float:
        """Gradient penalty at x_mix, accumulating its parameter gradient.

        The critic is piecewise multilinear (conv, spectral scaling, LeakyReLU),
        so d(penalty)/d(params) is exactly a reverse pass over the
        tangent-linear forward seeded with 2*gp_weight*(|g|-1)*g/|g|, where
        g is the input gradient of the mean score. Activation masks are
        locally constant; biases receive no penalty gradient.
        """
        score, caches = self.forward(x_mix)
        seed = np.full_like(score, 1.0 / score.size)
        g = self.input_grad(seed, caches)
        norm = float(np.linalg.norm(g))
        penalty = gp_weight * (norm - 1.0) ** 2
        if not accumulate:
            return penalty
        if norm < _TINY:
            return penalty
        t = (2.0 * gp_weight * (norm - 1.0) / norm) * g
        # tangent-linear forward: biases drop out, masks come from the primal
        tangents = []
        for (c, mask) in caches:
            _, wbar, _, _ = c
            tangents.append(t)
            t = conv3d_forward(t, wbar, np.zeros(wbar.shape[4]))
            if mask is not None:
                t = t * mask
        # reverse over the tangent path only
        dt = np.full_like(score, 1.0 / score.size)
        for (c, mask), t_in in zip(reversed(caches), reversed(tangents)):
            _, wbar, sigma, name = c
            du = dt if mask is None else dt * mask
            dwbar = conv3d_weight_grad(t_in, du, wbar.shape[:3])
            self.grads[f"{name}.w"] += _sn_raw_grad(self, name, dwbar, wbar, sigma)
            dt = conv3d_input_grad(du, wbar)
        return penalty


# ---------------------------------------------------------------------------
# optimizer


class Adam(object):
    """Adam on a Network's parameter dict; state lives with the optimizer."""

    def __init__(self, net: Network, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in net.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in net.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for k, p in self.net.params.items():
            g = self.net.grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
