"""WGAN-GP pieces: constructed-critic penalties, FD of the penalty gradient."""
from __future__ import annotations

import numpy as np
import pytest
from util_fd import central_diff_params, max_rel_err

from patchgen.errors import DataError, LossError
from patchgen.nn import Critic
from patchgen.patchgan import (
    adversarial_losses,
    critic_forward,
    gan_scale_loss,
    gradient_penalty,
    gradient_penalty_at,
    mix_point,
)


class LinearStubCritic:
    """score(x) = coef * sum(x), emitted as a single-position map."""

    def __init__(self, coef: float):
        self.coef = coef

    def forward(self, x):
        score = np.full((1, 1, 1, 1), self.coef * float(x.sum()))
        return score, x.shape

    def input_grad(self, dscore, cache):
        return np.full(cache, self.coef * float(dscore[0, 0, 0, 0]))


def test_unit_norm_critic_gets_zero_penalty():
    x = np.random.default_rng(0).normal(size=(2, 4, 4, 1))
    d = x.size
    critic = LinearStubCritic(1.0 / np.sqrt(d))
    assert gradient_penalty_at(critic, x, weight=10.0) == pytest.approx(0.0, abs=1e-12)


def test_doubled_critic_gets_weight_penalty():
    x = np.random.default_rng(1).normal(size=(2, 4, 4, 1))
    d = x.size
    critic = LinearStubCritic(2.0 / np.sqrt(d))
    assert gradient_penalty_at(critic, x, weight=10.0) == pytest.approx(10.0, rel=1e-12)
    assert gradient_penalty_at(critic, x, weight=3.5) == pytest.approx(3.5, rel=1e-12)


def test_mix_point_endpoints():
    rng = np.random.default_rng(2)
    real = rng.normal(size=(1, 3, 3, 1))
    fake = rng.normal(size=(1, 3, 3, 1))
    np.testing.assert_array_equal(mix_point(real, fake, 1.0), real)
    np.testing.assert_array_equal(mix_point(real, fake, 0.0), fake)
    with pytest.raises(DataError):
        mix_point(real, fake[:, :2], 0.5)


def test_gradient_penalty_uses_one_uniform_draw():
    rng = np.random.default_rng(3)
    real = rng.normal(size=(1, 3, 3, 1))
    fake = rng.normal(size=(1, 3, 3, 1))
    critic = Critic(np.random.default_rng(4), in_channels=1, channels=2, blocks=2, kernel=3)
    value = gradient_penalty(critic, real, fake, np.random.default_rng(99), weight=10.0)
    eps = float(np.random.default_rng(99).uniform())
    expected = gradient_penalty_at(critic, mix_point(real, fake, eps), weight=10.0)
    assert value == pytest.approx(expected, rel=1e-12)


def test_adversarial_losses_composition():
    rng = np.random.default_rng(5)
    real = rng.normal(size=(1, 3, 3, 1))
    fake = rng.normal(size=(1, 3, 3, 1))
    critic = Critic(np.random.default_rng(6), in_channels=1, channels=2, blocks=2, kernel=3)
    adv = adversarial_losses(critic, real, fake, np.random.default_rng(7), weight=10.0)
    assert adv.critic == pytest.approx(-adv.real_score + adv.fake_score + adv.penalty, rel=1e-12)
    assert adv.generator == pytest.approx(-adv.fake_score, rel=1e-12)
    assert adv.penalty >= 0.0
    with pytest.raises(LossError):
        critic_forward(critic, np.full_like(real, np.inf))


def test_gan_scale_loss_breakdown():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 2, 2, 1))
    x_bar = x + 0.5
    parts = gan_scale_loss(x_bar, x, adv_generator=-2.0, beta_adv=0.1)
    assert parts.recon == pytest.approx(np.linalg.norm((x_bar - x).ravel()), rel=1e-12)
    assert parts.total == pytest.approx(parts.recon - 0.2, rel=1e-12)


def test_penalty_param_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    critic = Critic(rng, in_channels=1, channels=2, blocks=3, kernel=3)
    x_mix = rng.normal(size=(2, 3, 3, 1))
    weight = 10.0

    critic.zero_grads()
    value = critic.penalty_grads(x_mix, weight)
    assert value > 0.0
    fd = central_diff_params(critic, lambda: critic.penalty_grads(x_mix, weight, accumulate=False))
    assert max_rel_err(critic.flatten_grads(), fd, floor=1e-3) < 1e-4
    # biases receive exactly zero penalty gradient
    for name in critic.sn_names:
        assert float(np.abs(critic.grads[f"{name}.b"]).max()) == 0.0


def test_real_critic_penalty_decreases_under_scaling():
    # scaling all weights down drives |grad| toward 0, so the penalty -> weight
    rng = np.random.default_rng(10)
    critic = Critic(rng, in_channels=1, channels=2, blocks=2, kernel=3)
    x = rng.normal(size=(1, 4, 4, 1))
    p0 = gradient_penalty_at(critic, x, weight=10.0)
    assert 0.0 <= p0 <= 10.0 * max(1.0, p0)  # sanity: finite, non-negative
    for name in critic.sn_names:
        critic.params[f"{name}.b"][...] = 0.0
    # a critic with zero weights has zero gradient: penalty == weight exactly
    for k in critic.params:
        if k.endswith(".w"):
            critic.params[k][...] = 0.0
    assert gradient_penalty_at(critic, x, weight=10.0) == pytest.approx(10.0, abs=1e-12)
