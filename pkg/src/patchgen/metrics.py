"""Sample diversity and Frechet feature distances for single-source models.

Diversity measures how much a set of generated clips actually varies: the
per-pixel standard deviation (in LAB space) across the set, averaged over
all positions and normalized by the global LAB std of the training clip.
A model that memorizes its input scores 0.

The Frechet metrics compare Gaussian fits of per-position feature vectors.
Feature extractors are pluggable; at desk scale the extractors are raw
pixels and a small fixed-seed random conv stack. Values are comparable only
across runs of the same extractor and configuration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .core import VideoTensor
from .errors import MetricError
from .kernels import conv3d_forward
from .resample import resize_linear

# sRGB -> XYZ under D65, the classic BT.709-derived matrix
_XYZ_FROM_RGB = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_LEAKY = 0.2


def to_lab(data: np.ndarray) -> np.ndarray:
    """[-1, 1] RGB array (..., 3) to CIE-LAB under the D65 white point."""
    if data.shape[-1] != 3:
        raise MetricError(f"LAB conversion needs 3 channels, got {data.shape[-1]}")
    rgb = (np.asarray(data, dtype=np.float64) + 1.0) / 2.0
    rgb = np.clip(rgb, 0.0, 1.0)

    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = linear @ _XYZ_FROM_RGB.T
    t = xyz / _D65_WHITE
    f = np.where(t > 0.008856, np.cbrt(t), 7.787 * t + 16.0 / 116.0)

    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def _intensity(video: VideoTensor) -> np.ndarray:
    """LAB representation used by the diversity metric.

    Grayscale clips are widened to gray RGB first and reduced to the L
    channel, so the (identically zero) chroma planes cannot dilute the score.
    """
    if video.channels == 3:
        return to_lab(video.data)
    return to_lab(np.repeat(video.data, 3, axis=-1))[..., :1]


def diversity(real: VideoTensor, samples: list[VideoTensor]) -> float:
    """Mean per-pixel LAB std across samples over the real clip's global std."""
    if len(samples) < 2:
        raise MetricError(f"diversity needs at least 2 samples, got {len(samples)}")
    for s in samples:
        if s.data.shape != real.data.shape:
            raise MetricError(
                f"sample shape {s.data.shape} does not match the training "
                f"clip {real.data.shape}"
            )
    real_std = float(np.std(_intensity(real)))
    if real_std == 0.0:
        raise MetricError("training clip is constant; diversity is undefined")
    stack = np.stack([_intensity(s) for s in samples])
    # shifting by one sample leaves the std unchanged but keeps identical
    # samples at exactly zero instead of mean-subtraction round-off
    stack -= stack[0].copy()
    return float(np.mean(np.std(stack, axis=0))) / real_std


@dataclass(frozen=True)
class FeatureMap:
    """Per-position feature vectors, [positions, D]."""

    features: np.ndarray

    def __post_init__(self) -> None:
        f = self.features
        if not isinstance(f, np.ndarray) or f.ndim != 2:
            raise MetricError("features must be a [positions, D] array")
        if f.shape[0] < 2:
            raise MetricError(
                f"need at least 2 feature positions for covariance, got {f.shape[0]}"
            )
        if f.shape[1] < 1:
            raise MetricError("feature dimension must be positive")
        if not np.isfinite(f).all():
            raise MetricError("features contain non-finite values")

    @property
    def dims(self) -> int:
        return self.features.shape[1]


def gaussian_stats(fm: FeatureMap) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and unbiased covariance of the feature set."""
    mu = fm.features.mean(axis=0)
    cov = np.atleast_2d(np.cov(fm.features, rowvar=False))
    return mu, cov


def _sqrt_product_trace(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """trace((cov_a cov_b)^{1/2}) through the symmetric form
    (B^{1/2} A B^{1/2})^{1/2}, clamping eigenvalue round-off at zero."""
    try:
        vals_b, vecs_b = np.linalg.eigh((cov_b + cov_b.T) / 2.0)
        b_half = (vecs_b * np.sqrt(np.clip(vals_b, 0.0, None))) @ vecs_b.T
        inner = b_half @ ((cov_a + cov_a.T) / 2.0) @ b_half
        vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"matrix square root failed: {exc}") from exc
    floor = -1e-8 * max(1.0, float(vals[-1]))
    if vals[0] < floor:
        raise MetricError(
            "matrix square root failed: product has eigenvalues in "
            f"[{vals[0]:.3e}, {vals[-1]:.3e}], below round-off"
        )
    return float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))


def frechet_distance(a: FeatureMap, b: FeatureMap) -> float:
    """||mu_a - mu_b||^2 + trace(cov_a + cov_b - 2 (cov_a cov_b)^{1/2})."""
    if a.dims != b.dims:
        raise MetricError(f"feature dimensions disagree: {a.dims} vs {b.dims}")
    mu_a, cov_a = gaussian_stats(a)
    mu_b, cov_b = gaussian_stats(b)
    diff = mu_a - mu_b
    value = float(diff @ diff) + float(
        np.trace(cov_a) + np.trace(cov_b) - 2.0 * _sqrt_product_trace(cov_a, cov_b)
    )
    if value < -1e-6 * max(1.0, abs(value)):
        raise MetricError(f"Frechet distance came out negative ({value:.3e})")
    return max(value, 0.0)


def subsampled_fid(
    a: FeatureMap,
    b: FeatureMap,
    k: int = 50,
    trials: int = 50,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean Frechet distance over random k-dimensional feature subsets.

    Estimating a DxD covariance from few positions is hopeless for large D;
    averaging the distance over small random coordinate subsets keeps the
    estimate usable. Values are only comparable at fixed k, trials, and seed
    policy.
    """
    if a.dims != b.dims:
        raise MetricError(f"feature dimensions disagree: {a.dims} vs {b.dims}")
    if not 1 <= k <= a.dims:
        raise MetricError(f"subset size k={k} must lie in [1, D={a.dims}]")
    if trials < 1:
        raise MetricError(f"trials must be positive, got {trials}")
    if rng is None:
        rng = seeding.stream(0, seeding.METRIC, 0)
    total = 0.0
    for _ in range(trials):
        # the draw advances the stream even when the subset is everything
        idx = np.sort(rng.choice(a.dims, size=k, replace=False))
        if k == a.dims:
            sub_a, sub_b = a, b
        else:
            sub_a = FeatureMap(a.features[:, idx])
            sub_b = FeatureMap(b.features[:, idx])
        total += frechet_distance(sub_a, sub_b)
    return total / trials


# ---------------------------------------------------------------------------
# feature extractors


class RawPixelFeatures:
    """Identity extractor: each pixel is a position, channels are the dims.

    Degenerates the Frechet metrics to pixel statistics; the fallback when
    no meaningful feature network is available.
    """

    def __call__(self, video: VideoTensor) -> FeatureMap:
        return FeatureMap(video.data.reshape(-1, video.channels))


class RandomConvFeatures:
    """Fixed-seed random 3D conv stack over an optionally resized clip.

    Random projections preserve enough geometry to rank perturbations, and a
    fixed seed makes the metric reproducible without shipping a trained
    network. `input_size` (frames, height, width) standardizes clip geometry
    before feature extraction, trilinearly.
    """

    def __init__(
        self,
        seed: int = 0,
        in_channels: int = 3,
        width: int = 16,
        feature_dim: int = 64,
        kernel: int = 3,
        input_size: tuple[int, int, int] | None = None,
    ):
        if in_channels not in (1, 3):
            raise MetricError(f"in_channels must be 1 or 3, got {in_channels}")
        if width < 1 or feature_dim < 1:
            raise MetricError("width and feature_dim must be positive")
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        self.input_size = input_size
        self.weights = []
        for i, (cin, cout) in enumerate(((in_channels, width), (width, feature_dim))):
            rng = seeding.stream(seed, seeding.METRIC, 1, i)
            std = np.sqrt(2.0 / (kernel**3 * cin))
            w = rng.normal(0.0, std, size=(kernel, kernel, kernel, cin, cout))
            self.weights.append((w, np.zeros(cout)))

    def __call__(self, video: VideoTensor) -> FeatureMap:
        if video.channels != self.in_channels:
            raise MetricError(
                f"extractor expects {self.in_channels} channels, clip has {video.channels}"
            )
        x = video.data
        if self.input_size is not None:
            x = resize_linear(x, self.input_size)
        h = conv3d_forward(x, *self.weights[0])
        h = np.where(h >= 0.0, h, _LEAKY * h)
        h = conv3d_forward(h, *self.weights[1])
        return FeatureMap(h.reshape(-1, self.feature_dim))


def svfid(real: VideoTensor, fake: VideoTensor, extractor) -> float:
    """Frechet distance between per-position features of two clips."""
    return frechet_distance(extractor(real), extractor(fake))


def report_line(name: str, value: float, seed: int, config_digest: str) -> str:
    """One metric as a structured text record."""
    return f"{name} value={value!r} seed={seed} config={config_digest}"
