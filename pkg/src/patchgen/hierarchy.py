"""The multi-scale model: state, generation chains, and training loops.

Scales 0..vae_levels form a patch VAE (scale 0 encodes/decodes a latent
field; later scales add residual detail). Scales above vae_levels are patch
GANs. Every scale n builds on the frozen results below it:

    x_bar[0] = G0(z)
    x_bar[n] = up(x_bar[n-1]) + Gn(up(x_bar[n-1]) [+ noise at GAN scales])

Training freezes everything except the networks of the current scale, with
one exception: the encoder and G0 keep fine-tuning (at a decayed rate)
through the remaining VAE scales. All randomness is drawn from streams keyed
by (scale, iteration, role), so the draw at any point is independent of
history and training can resume at scale boundaries bit-exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .core import PyramidSchedule, RunConfig, VideoTensor, round_half_up
from .errors import DataError, DivergenceError, StateError
from .nn import Adam, Critic, Encoder, Generator, copy_matching_state
from .patchvae import LossParts, recon_loss_grad
from .resample import downsample, resize_linear, resize_linear_adjoint

logger = logging.getLogger(__name__)

# per-iteration stream roles
_EPS = 0  # VAE reparameterization draw (shared across clips)
_CRITIC_FAKE = 1  # fake chain inside a critic step
_MIX = 2  # gradient-penalty interpolation scalar
_GEN_FAKE = 3  # fake chain inside a generator step


@dataclass
class ModelState:
    """Everything trained: networks, noise amplitudes, progress cursor."""

    config: RunConfig
    schedule: PyramidSchedule
    channels: int  # data channels (1 or 3)
    encoder: Encoder
    generators: list[Generator]
    critics: dict[int, Critic] = field(default_factory=dict)
    noise_amp: dict[int, float] = field(default_factory=dict)
    trained_scale: int = -1
    fps: float = 24.0

    @property
    def finest_scale(self) -> int:
        return self.config.finest_scale

    def require_scale(self, n: int) -> None:
        if not 0 <= n <= self.trained_scale:
            raise StateError(
                f"scale {n} is not trained yet (trained through {self.trained_scale})"
            )


def init_state(config: RunConfig, schedule: PyramidSchedule, channels: int, fps: float = 24.0) -> ModelState:
    """Fresh state with the encoder and base generator; later nets are
    created lazily when their scale starts, warm-started from below."""
    config.validate()
    if channels not in (1, 3):
        raise DataError(f"channels must be 1 or 3, got {channels}")
    enc_rng = seeding.stream(config.seed, seeding.INIT, 0, 0)
    g0_rng = seeding.stream(config.seed, seeding.INIT, 1, 0)
    encoder = Encoder(enc_rng, channels, config.channels, config.latent_dim, config.blocks, config.kernel)
    g0 = Generator(g0_rng, config.latent_dim, channels, config.channels, config.blocks, config.kernel)
    return ModelState(
        config=config,
        schedule=schedule,
        channels=channels,
        encoder=encoder,
        generators=[g0],
        fps=fps,
    )


# ---------------------------------------------------------------------------
# generation chains


def _chain_specs(state: ModelState, n: int, shape: tuple[int, int, int] | None) -> list[tuple[int, int, int]]:
    """Volume shapes for scales 0..n, optionally rescaled to a target shape."""
    specs = [s.volume_shape for s in state.schedule.specs[: n + 1]]
    if shape is None:
        return specs
    if any(s < 1 for s in shape):
        raise DataError(f"target shape must be positive, got {shape}")
    ratios = [shape[a] / specs[n][a] for a in range(3)]
    scaled = []
    prev = (1, 1, 1)
    for k, spec in enumerate(specs):
        if k == n:
            dims = tuple(shape)
        else:
            dims = tuple(
                max(prev[a], max(1, round_half_up(spec[a] * ratios[a]))) for a in range(3)
            )
        scaled.append(dims)
        prev = dims
    return scaled


def mean_latent(state: ModelState, x0: np.ndarray) -> np.ndarray:
    """Posterior mean of the coarsest clip; the deterministic code path."""
    mu, _, _ = state.encoder.forward(x0)
    return mu


def _residual_step(gen: Generator, prev: np.ndarray, target: tuple[int, int, int], noise: np.ndarray | None, training: bool, update_stats: bool):
    """One recursion step: upsample, optionally add noise, add the residual."""
    up = resize_linear(prev, target)
    gen_in = up if noise is None else up + noise
    residual, cache = gen.forward(gen_in, training=training, update_stats=update_stats)
    return up + residual, up, cache


def reconstruct_chain(state: ModelState, source: VideoTensor, n: int | None = None) -> np.ndarray:
    """Deterministic reconstruction of a training slice at scale n.

    Encodes the coarsest projection with the posterior mean and runs the
    residual chain with no injected noise, all networks in eval mode.
    """
    n = state.trained_scale if n is None else n
    state.require_scale(n)
    x0 = downsample(source, state.schedule[0]).data
    x = decode_scale0(state, mean_latent(state, x0))
    for k in range(1, n + 1):
        x, _, _ = _residual_step(
            state.generators[k], x, state.schedule[k].volume_shape, None, False, False
        )
    return x


def decode_scale0(state: ModelState, z: np.ndarray) -> np.ndarray:
    y, _ = state.generators[0].forward(z, training=False, update_stats=False)
    return y


def generate_random(
    state: ModelState,
    rng: np.random.Generator,
    n: int | None = None,
    shape: tuple[int, int, int] | None = None,
    z_init: np.ndarray | None = None,
) -> np.ndarray:
    """Draw a novel sample at scale n (default: finest trained).

    The latent field z' seeds scale 0; scales up to vae_levels add no further
    randomness; GAN scales add noise_amp-scaled Gaussian noise to the
    generator input. Draw order is fixed: z' first, then one noise field per
    GAN scale in ascending order. Passing z_init replaces the z' draw.
    """
    n = state.trained_scale if n is None else n
    state.require_scale(n)
    shapes = _chain_specs(state, n, shape)
    if z_init is None:
        z_init = rng.standard_normal(shapes[0] + (state.config.latent_dim,))
    elif z_init.shape != shapes[0] + (state.config.latent_dim,):
        raise DataError(
            f"z_init shape {z_init.shape} does not match latent field "
            f"{shapes[0] + (state.config.latent_dim,)}"
        )
    x = decode_scale0(state, z_init)
    for k in range(1, n + 1):
        noise = None
        if k > state.config.vae_levels:
            amp = state.noise_amp.get(k, 0.0)
            noise = amp * rng.standard_normal(shapes[k] + (state.channels,))
        x, _, _ = _residual_step(state.generators[k], x, shapes[k], noise, False, False)
    return x


def sample_video(
    state: ModelState,
    rng: np.random.Generator,
    n: int | None = None,
    shape: tuple[int, int, int] | None = None,
) -> VideoTensor:
    """generate_random clipped to [-1, 1] and wrapped for export."""
    raw = generate_random(state, rng, n=n, shape=shape)
    return VideoTensor(np.clip(raw, -1.0, 1.0), fps=state.fps)


def inject(
    state: ModelState,
    guide: VideoTensor,
    start_scale: int,
    rng: np.random.Generator | None = None,
) -> VideoTensor:
    """Re-render a guide clip through the upper scales of the model.

    The chain below start_scale is replaced by the guide downsampled to scale
    start_scale - 1; the recursion then runs upward as in sampling. Coarse
    guides (crude animations, edited layouts) come out with the training
    video's local texture and dynamics.
    """
    if not 1 <= start_scale <= state.trained_scale:
        raise StateError(
            f"start_scale must lie in [1, trained={state.trained_scale}], got {start_scale}"
        )
    if rng is None:
        rng = seeding.stream(state.config.seed, seeding.SAMPLE, 0)
    x = downsample(guide, state.schedule[start_scale - 1]).data
    for k in range(start_scale, state.trained_scale + 1):
        noise = None
        if k > state.config.vae_levels:
            amp = state.noise_amp.get(k, 0.0)
            noise = amp * rng.standard_normal(state.schedule[k].volume_shape + (state.channels,))
        x, _, _ = _residual_step(state.generators[k], x, state.schedule[k].volume_shape, noise, False, False)
    return VideoTensor(np.clip(x, -1.0, 1.0), fps=guide.fps)


# ---------------------------------------------------------------------------
# training


def build_pyramids(state: ModelState, clips: list[VideoTensor]) -> list[list[np.ndarray]]:
    """Per-clip projections onto every scale of the schedule."""
    if not clips:
        raise DataError("need at least one training clip")
    pyramids = []
    for clip in clips:
        if clip.frames != state.schedule.slice_frames:
            raise DataError(
                f"training clip has {clip.frames} frames, schedule slices are "
                f"{state.schedule.slice_frames}"
            )
        if clip.channels != state.channels:
            raise DataError(
                f"training clip has {clip.channels} channels, model expects {state.channels}"
            )
        pyramids.append([downsample(clip, spec).data for spec in state.schedule])
    return pyramids


def _is_gan_scale(state: ModelState, n: int) -> bool:
    return n > state.config.vae_levels


def prepare_scale(state: ModelState, n: int, pyramids: list[list[np.ndarray]]) -> None:
    """Create scale-n networks (warm-started) and freeze the noise amplitude."""
    cfg = state.config
    if n != state.trained_scale + 1:
        raise StateError(
            f"cannot start scale {n}: trained through {state.trained_scale}"
        )
    if n >= 1 and len(state.generators) == n:
        rng = seeding.stream(cfg.seed, seeding.INIT, 1, n)
        gen = Generator(rng, state.channels, state.channels, cfg.channels, cfg.blocks, cfg.kernel)
        copied = copy_matching_state(state.generators[n - 1], gen)
        logger.info("scale %d: generator warm start (%d tensors copied)", n, len(copied))
        state.generators.append(gen)
    if _is_gan_scale(state, n):
        if n not in state.critics:
            rng = seeding.stream(cfg.seed, seeding.INIT, 2, n)
            critic = Critic(rng, state.channels, cfg.channels, cfg.blocks, cfg.kernel)
            if n - 1 in state.critics:
                copy_matching_state(state.critics[n - 1], critic)
                logger.info("scale %d: critic warm start from scale %d", n, n - 1)
            state.critics[n] = critic
        if n not in state.noise_amp:
            errs = []
            for pyramid in pyramids:
                recon = _mean_chain(state, pyramid, n - 1)
                up = resize_linear(recon, state.schedule[n].volume_shape)
                errs.append(float(np.sqrt(np.mean((up - pyramid[n]) ** 2))))
            state.noise_amp[n] = float(np.mean(errs))
            logger.info("scale %d: noise amplitude %.6f", n, state.noise_amp[n])


def _mean_chain(state: ModelState, pyramid: list[np.ndarray], n: int) -> np.ndarray:
    """Eval-mode mean-path reconstruction from a precomputed pyramid."""
    x = decode_scale0(state, mean_latent(state, pyramid[0]))
    for k in range(1, n + 1):
        x, _, _ = _residual_step(
            state.generators[k], x, state.schedule[k].volume_shape, None, False, False
        )
    return x


def vae_scale_loss(
    state: ModelState,
    pyramid: list[np.ndarray],
    n: int,
    eps: np.ndarray,
    with_grads: bool = False,
    update_stats: bool = False,
) -> LossParts:
    """Scale-n VAE objective for one clip at a pinned reparameterization draw.

    ||x_bar[n] - x[n]||  (+ ||x_bar[0] - x[0]|| when n > 0)  + beta * KL(x[0]).
    With with_grads, accumulates into the encoder, G0, and Gn; frozen middle
    generators run in eval mode and receive nothing.
    """
    cfg = state.config
    enc, g0 = state.encoder, state.generators[0]
    x0, xn = pyramid[0], pyramid[n]
    mu, log_var, enc_cache = enc.forward(x0)
    sigma = np.exp(0.5 * log_var)
    z = mu + sigma * eps
    x_bar0, g0_cache = g0.forward(z, training=True, update_stats=update_stats)
    kl = 0.5 * float(np.sum(mu * mu + np.exp(log_var) - log_var - 1.0))

    # the frozen middle of the chain, then the trained top
    x = x_bar0
    mids = []
    top_cache = None
    for k in range(1, n + 1):
        training = k == n
        x, _, cache = _residual_step(
            state.generators[k], x, state.schedule[k].volume_shape, None, training,
            training and update_stats,
        )
        if training:
            top_cache = cache
        else:
            mids.append(cache)

    recon_n = float(np.linalg.norm((x - xn).ravel()))
    loss = recon_n + cfg.beta_vae * kl
    recon_0 = 0.0
    if n > 0:
        recon_0 = float(np.linalg.norm((x_bar0 - x0).ravel()))
        loss += recon_0

    if with_grads:
        dx = (x - xn) / max(recon_n, 1e-12)
        for k in range(n, 0, -1):
            gen = state.generators[k]
            cache = top_cache if k == n else mids[k - 1]
            dres = gen.backward(dx, cache, accumulate=(k == n))
            dup = dx + dres
            dx = resize_linear_adjoint(dup, state.schedule[k - 1].volume_shape)
        dx_bar0 = dx
        if n > 0:
            dx_bar0 = dx_bar0 + (x_bar0 - x0) / max(recon_0, 1e-12)
        dz = g0.backward(dx_bar0, g0_cache)
        dmu = dz + cfg.beta_vae * mu
        dlogv = dz * eps * 0.5 * sigma + cfg.beta_vae * 0.5 * (np.exp(log_var) - 1.0)
        enc.backward(dmu, dlogv, enc_cache)
    return LossParts(total=loss, recon=recon_n, reg=kl)


def _vae_iteration(state: ModelState, pyramids: list[list[np.ndarray]], n: int, it: int) -> dict:
    """One optimizer step of the scale-n VAE objective, summed over clips."""
    cfg = state.config
    eps_rng = seeding.stream(cfg.seed, seeding.TRAIN, n, it, _EPS)
    eps = eps_rng.standard_normal(pyramids[0][0].shape[:3] + (cfg.latent_dim,))

    state.encoder.power_iterate()
    state.encoder.zero_grads()
    state.generators[0].zero_grads()
    if n > 0:
        state.generators[n].zero_grads()

    total = recon_sum = reg_sum = 0.0
    for pyramid in pyramids:
        parts = vae_scale_loss(state, pyramid, n, eps, with_grads=True, update_stats=True)
        total += parts.total
        recon_sum += parts.recon
        reg_sum += parts.reg

    if not np.isfinite(total):
        raise DivergenceError(f"scale {n} iteration {it}: non-finite loss {total}")
    return {"scale": n, "iter": it, "total": total, "recon": recon_sum, "reg": reg_sum}


def _random_chain_train(state: ModelState, rng: np.random.Generator, n: int) -> tuple[np.ndarray, list]:
    """Random-sample chain during scale-n training; caches only scale n.

    Every step runs in eval mode, including the trained top: GAN scales pin
    their BN buffers at scale entry, so training sees the same function that
    sampling will use, and running statistics never chase the noisy path.
    """
    cfg = state.config
    z = rng.standard_normal(state.schedule[0].volume_shape + (cfg.latent_dim,))
    x = decode_scale0(state, z)
    top = None
    for k in range(1, n + 1):
        noise = None
        if k > cfg.vae_levels:
            amp = state.noise_amp.get(k, 0.0)
            noise = amp * rng.standard_normal(state.schedule[k].volume_shape + (state.channels,))
        x, _, cache = _residual_step(
            state.generators[k], x, state.schedule[k].volume_shape, noise, False, False
        )
        if k == n:
            top = cache
    return x, top


def _gan_iteration(
    state: ModelState,
    pyramids: list[list[np.ndarray]],
    n: int,
    it: int,
    opt_d: Adam,
    opt_g: Adam,
) -> dict:
    """critic_steps critic updates, then one generator update."""
    cfg = state.config
    gn, critic = state.generators[n], state.critics[n]

    critic_total = penalty_total = 0.0
    for step in range(cfg.critic_steps):
        critic.power_iterate()
        critic.zero_grads()
        step_loss = 0.0
        for ci, pyramid in enumerate(pyramids):
            real = pyramid[n]
            fake_rng = seeding.stream(cfg.seed, seeding.TRAIN, n, it, _CRITIC_FAKE, step, ci)
            fake, _ = _random_chain_train(state, fake_rng, n)
            score_r, cache_r = critic.forward(real)
            score_f, cache_f = critic.forward(fake)
            critic.backward(np.full_like(score_r, -1.0 / score_r.size), cache_r)
            critic.backward(np.full_like(score_f, 1.0 / score_f.size), cache_f)
            mix_rng = seeding.stream(cfg.seed, seeding.TRAIN, n, it, _MIX, step, ci)
            eps_mix = float(mix_rng.uniform())
            x_mix = eps_mix * real + (1.0 - eps_mix) * fake
            penalty = critic.penalty_grads(x_mix, cfg.gp_weight)
            step_loss += -float(score_r.mean()) + float(score_f.mean()) + penalty
            penalty_total += penalty
        if not np.isfinite(step_loss):
            raise DivergenceError(f"scale {n} iteration {it}: non-finite critic loss")
        critic_total += step_loss
        opt_d.step()

    gn.zero_grads()
    total = recon_sum = adv_sum = 0.0
    for ci, pyramid in enumerate(pyramids):
        # reconstruction path on the posterior mean, no injected noise
        x_bar, top_cache = _mean_chain_train_top(state, pyramid, n)
        recon, dx = recon_loss_grad(x_bar, pyramid[n])
        gn.backward(dx, top_cache)

        fake_rng = seeding.stream(cfg.seed, seeding.TRAIN, n, it, _GEN_FAKE, ci)
        fake, fake_cache = _random_chain_train(state, fake_rng, n)
        score_f, cache_f = critic.forward(fake)
        adv = -float(score_f.mean())
        dfake = critic.input_grad(np.full_like(score_f, -cfg.beta_adv / score_f.size), cache_f)
        gn.backward(dfake, fake_cache)

        total += recon + cfg.beta_adv * adv
        recon_sum += recon
        adv_sum += adv
    if not np.isfinite(total):
        raise DivergenceError(f"scale {n} iteration {it}: non-finite generator loss")
    opt_g.step()
    return {
        "scale": n,
        "iter": it,
        "total": total,
        "recon": recon_sum,
        "reg": adv_sum,
        "critic": critic_total,
        "penalty": penalty_total,
    }


def _mean_chain_train_top(state: ModelState, pyramid: list[np.ndarray], n: int):
    """Mean-path reconstruction caching scale n; all eval mode (pinned BN)."""
    x = decode_scale0(state, mean_latent(state, pyramid[0]))
    for k in range(1, n):
        x, _, _ = _residual_step(
            state.generators[k], x, state.schedule[k].volume_shape, None, False, False
        )
    out, _, cache = _residual_step(
        state.generators[n], x, state.schedule[n].volume_shape, None, False, False
    )
    return out, cache


def _calibrate_generator(state: ModelState, pyramids: list[list[np.ndarray]], k: int) -> None:
    """Pin generator k's BN buffers to its mean-path input statistics."""
    if k == 0:
        inputs = [mean_latent(state, pyr[0]) for pyr in pyramids]
    else:
        inputs = [
            resize_linear(_mean_chain(state, pyr, k - 1), state.schedule[k].volume_shape)
            for pyr in pyramids
        ]
    state.generators[k].calibrate(inputs)


def train_scale(
    state: ModelState,
    clips: list[VideoTensor] | None,
    n: int,
    pyramids: list[list[np.ndarray]] | None = None,
    progress=None,
) -> list[dict]:
    """Train scale n for config.iters_per_scale iterations.

    Freezing: at VAE scales the encoder and G0 fine-tune (decayed rate) and
    Gn trains; at GAN scales only Gn and Dn train. Everything else is
    untouched, in eval mode throughout.

    BN statistics: a GAN-scale generator has its buffers pinned once at scale
    entry (its mean-path input is frozen for the whole scale) and then runs
    eval mode everywhere, so the critic and the optimizer see exactly the
    sampling-time function. VAE scales train on batch statistics and pin the
    trained generators to the final mean path at scale end, so eval-mode
    reconstruction matches what the optimizer produced.
    """
    cfg = state.config
    if pyramids is None:
        if clips is None:
            raise DataError("train_scale needs clips or precomputed pyramids")
        pyramids = build_pyramids(state, clips)
    prepare_scale(state, n, pyramids)

    history = []
    if _is_gan_scale(state, n):
        _calibrate_generator(state, pyramids, n)
        opt_d = Adam(state.critics[n], cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
        opt_g = Adam(state.generators[n], cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
        for it in range(cfg.iters_per_scale):
            entry = _gan_iteration(state, pyramids, n, it, opt_d, opt_g)
            history.append(entry)
            if progress is not None:
                progress(entry)
    else:
        lr_base = cfg.lr * cfg.lr_decay**n
        opt_enc = Adam(state.encoder, lr_base, cfg.adam_beta1, cfg.adam_beta2)
        opt_g0 = Adam(state.generators[0], lr_base, cfg.adam_beta1, cfg.adam_beta2)
        opt_gn = (
            Adam(state.generators[n], cfg.lr, cfg.adam_beta1, cfg.adam_beta2) if n > 0 else None
        )
        for it in range(cfg.iters_per_scale):
            entry = _vae_iteration(state, pyramids, n, it)
            opt_enc.step()
            opt_g0.step()
            if opt_gn is not None:
                opt_gn.step()
            history.append(entry)
            if progress is not None:
                progress(entry)
        # pin eval-mode normalization to the trained nets' final mean path;
        # G0 first, its pinned stats feed the chain below Gn
        _calibrate_generator(state, pyramids, 0)
        if n > 0:
            _calibrate_generator(state, pyramids, n)
    state.trained_scale = n
    return history


def train_all(
    state: ModelState,
    clips: list[VideoTensor],
    progress=None,
    after_scale=None,
) -> list[dict]:
    """Train every remaining scale, coarse to fine, resuming at the cursor."""
    if state.trained_scale >= state.config.finest_scale:
        raise StateError("model is already fully trained")
    pyramids = build_pyramids(state, clips)
    history = []
    for n in range(state.trained_scale + 1, state.config.finest_scale + 1):
        kind = "gan" if _is_gan_scale(state, n) else "vae"
        logger.info(
            "training scale %d/%d (%s) at %s", n, state.config.finest_scale, kind,
            state.schedule[n].volume_shape,
        )
        history.extend(train_scale(state, None, n, pyramids=pyramids, progress=progress))
        if after_scale is not None:
            after_scale(state, n)
    return history
