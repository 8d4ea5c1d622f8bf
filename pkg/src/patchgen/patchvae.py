"""Patch-level variational pieces: latent fields, the VAE objective, priors.

The encoder maps a clip to a spatio-temporal field of independent Gaussians
(one per position). The KL term is the closed form against a standard-normal
prior, summed over every field element; reconstruction error is the plain L2
norm of the difference, not a mean of squares.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, LossError
from .nn import Encoder, Generator

_TINY = 1e-12


@dataclass(frozen=True)
class LatentField:
    """Per-position Gaussian posterior parameters, both [T, H, W, D]."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self) -> None:
        if self.mu.shape != self.log_var.shape:
            raise DataError(
                f"latent field shapes differ: {self.mu.shape} vs {self.log_var.shape}"
            )
        if self.mu.ndim != 4:
            raise DataError(f"latent field must be [T, H, W, D], got {self.mu.shape}")


@dataclass(frozen=True)
class LossParts:
    """A training objective with its reconstruction/regularizer breakdown."""

    total: float
    recon: float
    reg: float


def encode(encoder: Encoder, x: np.ndarray) -> LatentField:
    """Posterior field for a clip; log variance arrives already clamped."""
    mu, log_var, _ = encoder.forward(x)
    return LatentField(mu=mu, log_var=log_var)


def reparameterize(field: LatentField, rng: np.random.Generator, eps: np.ndarray | None = None) -> np.ndarray:
    """Draw z = mu + sigma * eps; pass eps explicitly to pin the draw."""
    if eps is None:
        eps = rng.standard_normal(field.mu.shape)
    return field.mu + np.exp(0.5 * field.log_var) * eps


def kl_loss(field: LatentField) -> float:
    """Closed-form KL(q || N(0, I)) summed over the whole field."""
    mu, lv = field.mu, field.log_var
    if not (np.isfinite(mu).all() and np.isfinite(lv).all()):
        raise LossError("latent field contains non-finite values")
    return 0.5 * float(np.sum(mu * mu + np.exp(lv) - lv - 1.0))


def decode(generator: Generator, z: np.ndarray, training: bool = False) -> np.ndarray:
    """Map a latent field to a clip at the same scale."""
    y, _ = generator.forward(z, training=training, update_stats=False)
    return y


def sample_prior(shape: tuple[int, int, int], latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal latent field z' of [T, H, W, latent_dim]."""
    t, h, w = shape
    if t < 1 or h < 1 or w < 1 or latent_dim < 1:
        raise DataError(f"latent field shape must be positive, got {shape} x {latent_dim}")
    return rng.standard_normal((t, h, w, latent_dim))


def recon_loss(x_hat: np.ndarray, x: np.ndarray) -> float:
    """Plain L2 norm of the difference over the whole clip."""
    if x_hat.shape != x.shape:
        raise DataError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    if not (np.isfinite(x_hat).all() and np.isfinite(x).all()):
        raise LossError("reconstruction loss saw non-finite values")
    return float(np.linalg.norm((x_hat - x).ravel()))


def recon_loss_grad(x_hat: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
    value = recon_loss(x_hat, x)
    return value, (x_hat - x) / max(value, _TINY)


def vae_loss(
    encoder: Encoder,
    generator: Generator,
    x: np.ndarray,
    rng: np.random.Generator,
    beta: float,
    eps: np.ndarray | None = None,
) -> LossParts:
    """Single-scale objective: ||G0(z') - x|| + beta * KL, z' ~ q(z | x)."""
    if not np.isfinite(x).all():
        raise LossError("vae_loss saw non-finite input")
    field = encode(encoder, x)
    z = reparameterize(field, rng, eps)
    x_hat = decode(generator, z, training=True)
    recon = recon_loss(x_hat, x)
    kl = kl_loss(field)
    return LossParts(total=recon + beta * kl, recon=recon, reg=kl)


def vae_loss_grads(
    encoder: Encoder,
    generator: Generator,
    x: np.ndarray,
    eps: np.ndarray,
    beta: float,
    update_stats: bool = True,
) -> LossParts:
    """vae_loss with backprop: accumulates gradients into both networks."""
    if not np.isfinite(x).all():
        raise LossError("vae_loss saw non-finite input")
    mu, log_var, enc_cache = encoder.forward(x)
    sigma = np.exp(0.5 * log_var)
    z = mu + sigma * eps
    x_hat, gen_cache = generator.forward(z, training=True, update_stats=update_stats)
    recon, dx_hat = recon_loss_grad(x_hat, x)
    kl = 0.5 * float(np.sum(mu * mu + np.exp(log_var) - log_var - 1.0))

    dz = generator.backward(dx_hat, gen_cache)
    dmu = dz + beta * mu
    dlogv = dz * eps * 0.5 * sigma + beta * 0.5 * (np.exp(log_var) - 1.0)
    encoder.backward(dmu, dlogv, enc_cache)
    return LossParts(total=recon + beta * kl, recon=recon, reg=kl)
