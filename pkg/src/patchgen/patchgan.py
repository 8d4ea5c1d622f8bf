"""Patch-critic scoring and the WGAN objective with gradient penalty.

The critic emits a score map (one score per patch position); losses reduce it
by mean, so a clip's score is the average patch score. The penalty constrains
the GLOBAL input-gradient norm of that mean score to 1 at a random point on
the segment between a real and a generated clip (one mixing draw per clip).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, LossError
from .nn import Critic
from .patchvae import LossParts


@dataclass(frozen=True)
class AdvLosses:
    """Critic and generator objectives with the critic-side breakdown."""

    critic: float
    generator: float
    real_score: float
    fake_score: float
    penalty: float


def critic_forward(critic: Critic, x: np.ndarray) -> np.ndarray:
    """Patch score map for a clip."""
    if not np.isfinite(x).all():
        raise LossError("critic saw non-finite input")
    score, _ = critic.forward(x)
    return score


def mix_point(real: np.ndarray, fake: np.ndarray, eps: float) -> np.ndarray:
    """Segment point eps*real + (1-eps)*fake; eps=1 is real, eps=0 is fake."""
    if real.shape != fake.shape:
        raise DataError(f"real/fake shapes differ: {real.shape} vs {fake.shape}")
    return eps * real + (1.0 - eps) * fake


def gradient_penalty_at(critic: Critic, x_mix: np.ndarray, weight: float) -> float:
    """Penalty weight * (|grad_x mean score| - 1)^2 at a fixed point."""
    if not np.isfinite(x_mix).all():
        raise LossError("gradient penalty saw non-finite input")
    score, cache = critic.forward(x_mix)
    seed = np.full_like(score, 1.0 / score.size)
    g = critic.input_grad(seed, cache)
    norm = float(np.linalg.norm(g))
    return weight * (norm - 1.0) ** 2


def gradient_penalty(
    critic: Critic,
    real: np.ndarray,
    fake: np.ndarray,
    rng: np.random.Generator,
    weight: float,
) -> float:
    """Penalty at a uniformly random point between real and fake."""
    eps = float(rng.uniform())
    return gradient_penalty_at(critic, mix_point(real, fake, eps), weight)


def adversarial_losses(
    critic: Critic,
    real: np.ndarray,
    fake: np.ndarray,
    rng: np.random.Generator,
    weight: float,
) -> AdvLosses:
    """WGAN losses: critic drives real scores up and fake scores down."""
    real_score = float(np.mean(critic_forward(critic, real)))
    fake_score = float(np.mean(critic_forward(critic, fake)))
    penalty = gradient_penalty(critic, real, fake, rng, weight)
    return AdvLosses(
        critic=-real_score + fake_score + penalty,
        generator=-fake_score,
        real_score=real_score,
        fake_score=fake_score,
        penalty=penalty,
    )


def gan_scale_loss(x_bar: np.ndarray, x: np.ndarray, adv_generator: float, beta_adv: float) -> LossParts:
    """Generator objective at a GAN scale: reconstruction + weighted adversary."""
    if x_bar.shape != x.shape:
        raise DataError(f"shape mismatch: {x_bar.shape} vs {x.shape}")
    if not (np.isfinite(x_bar).all() and np.isfinite(x).all()):
        raise LossError("gan_scale_loss saw non-finite values")
    recon = float(np.linalg.norm((x_bar - x).ravel()))
    return LossParts(total=recon + beta_adv * adv_generator, recon=recon, reg=adv_generator)
