"""Chain identities, freezing, warm starts, training, resume determinism."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from util_fd import max_rel_err

from patchgen import seeding
from patchgen.checkpoint import checkpoint_lock, load_state, save_state
from patchgen.core import RunConfig, VideoTensor, schedule_for_shape
from patchgen.errors import DataError, StateError
from patchgen.hierarchy import (
    ModelState,
    build_pyramids,
    generate_random,
    init_state,
    inject,
    prepare_scale,
    reconstruct_chain,
    sample_video,
    train_all,
    train_scale,
    vae_scale_loss,
)
from patchgen.resample import resize_linear

MICRO = RunConfig(
    finest_scale=2,
    vae_levels=1,
    frame_strides=(1, 2),
    base_height=4,
    max_height=8,
    channels=3,
    latent_dim=2,
    blocks=2,
    kernel=3,
    iters_per_scale=3,
    critic_steps=2,
    seed=5,
)


def micro_clip(seed=0, frames=3, size=8) -> VideoTensor:
    rng = np.random.default_rng(seed)
    return VideoTensor(rng.uniform(-1, 1, size=(frames, size, size, 3)))


def micro_state(config=MICRO, seed_clip=0) -> tuple[ModelState, list[VideoTensor]]:
    clip = micro_clip(seed_clip)
    schedule = schedule_for_shape(config, clip.frames, clip.height, clip.width)
    state = init_state(config, schedule, channels=3)
    return state, [clip]


def zero_residuals(state: ModelState) -> None:
    for gen in state.generators[1:]:
        for key in gen.params:
            gen.params[key][...] = 0.0


def test_zero_residual_chain_equals_iterated_upsampling():
    state, clips = micro_state()
    pyramids = build_pyramids(state, clips)
    state.trained_scale = 0
    for n in (1, 2):
        prepare_scale(state, n, pyramids)
        state.trained_scale = n
    zero_residuals(state)
    rng = seeding.stream(0, seeding.SAMPLE, 0)
    z = rng.standard_normal(state.schedule[0].volume_shape + (2,))
    x0 = generate_random(state, rng, n=0, z_init=z)
    for n in (1, 2):
        chained = generate_random(state, rng, n=n, z_init=z)
        manual = x0
        for k in range(1, n + 1):
            manual = resize_linear(manual, state.schedule[k].volume_shape)
        assert np.array_equal(chained, manual)


def test_vae_scales_inject_no_noise_gan_scales_do():
    state, clips = micro_state()
    pyramids = build_pyramids(state, clips)
    state.trained_scale = 0
    for n in (1, 2):
        prepare_scale(state, n, pyramids)
        state.trained_scale = n
    state.noise_amp[2] = 0.5  # pretend training found a non-trivial amplitude
    z = np.random.default_rng(3).standard_normal(state.schedule[0].volume_shape + (2,))
    # same z, different downstream rngs: identical through the VAE scales
    a1 = generate_random(state, np.random.default_rng(1), n=1, z_init=z)
    a2 = generate_random(state, np.random.default_rng(2), n=1, z_init=z)
    np.testing.assert_array_equal(a1, a2)
    # ...and different at the GAN scale
    b1 = generate_random(state, np.random.default_rng(1), n=2, z_init=z)
    b2 = generate_random(state, np.random.default_rng(2), n=2, z_init=z)
    assert not np.array_equal(b1, b2)


def test_generate_random_is_seed_deterministic():
    state, clips = micro_state()
    train_all(state, clips)
    s1 = generate_random(state, seeding.stream(9, seeding.SAMPLE, 0))
    s2 = generate_random(state, seeding.stream(9, seeding.SAMPLE, 0))
    assert s1.tobytes() == s2.tobytes()
    s3 = generate_random(state, seeding.stream(10, seeding.SAMPLE, 0))
    assert not np.array_equal(s1, s3)


def test_generate_random_shape_override():
    state, clips = micro_state()
    train_all(state, clips)
    out = generate_random(state, seeding.stream(1, seeding.SAMPLE, 0), shape=(5, 12, 10))
    assert out.shape == (5, 12, 10, 3)
    v = sample_video(state, seeding.stream(1, seeding.SAMPLE, 1))
    assert v.volume_shape == state.schedule.finest.volume_shape
    assert v.data.min() >= -1.0 and v.data.max() <= 1.0


def test_warm_start_copies_previous_scale():
    state, clips = micro_state()
    pyramids = build_pyramids(state, clips)
    state.trained_scale = 0
    prepare_scale(state, 1, pyramids)
    g0, g1 = state.generators[0], state.generators[1]
    # all tensors except the first conv (latent-in vs video-in) transfer
    np.testing.assert_array_equal(g1.params["out.w"], g0.params["out.w"])
    assert g1.params["b0.w"].shape != g0.params["b0.w"].shape
    state.trained_scale = 1
    prepare_scale(state, 2, pyramids)
    g2 = state.generators[2]
    assert g2.state_bytes() == g1.state_bytes()  # identical shapes: full copy
    assert 2 in state.critics and 2 in state.noise_amp
    assert state.noise_amp[2] > 0.0


def test_prepare_scale_guards_cursor():
    state, clips = micro_state()
    pyramids = build_pyramids(state, clips)
    with pytest.raises(StateError):
        prepare_scale(state, 2, pyramids)  # scale 1 not trained yet


def test_duplicated_clip_doubles_the_loss():
    state1, clips = micro_state()
    state2, _ = micro_state()
    pyr1 = build_pyramids(state1, clips)
    eps = np.random.default_rng(4).standard_normal(pyr1[0][0].shape[:3] + (2,))
    single = vae_scale_loss(state1, pyr1[0], 0, eps).total
    double = sum(
        vae_scale_loss(state2, pyr, 0, eps).total for pyr in build_pyramids(state2, clips * 2)
    )
    assert double == 2.0 * single


def test_freezing_during_vae_and_gan_scales():
    state, clips = micro_state()
    pyramids = build_pyramids(state, clips)
    train_scale(state, None, 0, pyramids=pyramids)
    enc_after0 = state.encoder.state_bytes()
    g0_after0 = state.generators[0].state_bytes()

    train_scale(state, None, 1, pyramids=pyramids)
    # encoder and G0 fine-tune through VAE scales: they must have changed
    assert state.encoder.state_bytes() != enc_after0
    assert state.generators[0].state_bytes() != g0_after0

    enc_after1 = state.encoder.state_bytes()
    g0_after1 = state.generators[0].state_bytes()
    g1_after1 = state.generators[1].state_bytes()
    train_scale(state, None, 2, pyramids=pyramids)
    # at the GAN scale everything below is frozen bit-exactly
    assert state.encoder.state_bytes() == enc_after1
    assert state.generators[0].state_bytes() == g0_after1
    assert state.generators[1].state_bytes() == g1_after1
    # while the trained pair moved
    assert state.generators[2].state_bytes() != state.generators[1].state_bytes()


def test_vae_scale_loss_gradcheck_through_chain():
    state, clips = micro_state()
    pyramids = build_pyramids(state, clips)
    state.trained_scale = 0
    prepare_scale(state, 1, pyramids)
    eps = np.random.default_rng(6).standard_normal(pyramids[0][0].shape[:3] + (2,))

    enc, g0, g1 = state.encoder, state.generators[0], state.generators[1]
    for net in (enc, g0, g1):
        net.zero_grads()
    vae_scale_loss(state, pyramids[0], 1, eps, with_grads=True)

    def value():
        return vae_scale_loss(state, pyramids[0], 1, eps).total

    from util_fd import central_diff_params

    for net in (enc, g0, g1):
        fd = central_diff_params(net, value)
        assert max_rel_err(net.flatten_grads(), fd, floor=1e-3) < 1e-5


def test_train_all_produces_history_and_updates_cursor():
    state, clips = micro_state()
    history = train_all(state, clips)
    assert state.trained_scale == 2
    assert len(history) == 3 * MICRO.iters_per_scale
    assert all(np.isfinite(h["total"]) for h in history)
    gan_entries = [h for h in history if h["scale"] == 2]
    assert all("critic" in h and "penalty" in h for h in gan_entries)
    with pytest.raises(StateError):
        train_all(state, clips)  # already complete


def test_reconstruct_chain_shapes_and_targets():
    state, clips = micro_state()
    train_all(state, clips)
    for n in range(3):
        out = reconstruct_chain(state, clips[0], n)
        assert out.shape == state.schedule[n].volume_shape + (3,)
    full = reconstruct_chain(state, clips[0])
    assert full.shape == state.schedule.finest.volume_shape + (3,)


def test_inject_runs_upper_scales():
    state, clips = micro_state()
    train_all(state, clips)
    guide = micro_clip(seed=42)
    out = inject(state, guide, start_scale=1, rng=np.random.default_rng(0))
    assert out.volume_shape == state.schedule.finest.volume_shape
    with pytest.raises(StateError):
        inject(state, guide, start_scale=0)
    with pytest.raises(StateError):
        inject(state, guide, start_scale=3)


def test_resume_at_scale_boundary_matches_uninterrupted(tmp_path):
    # run A: train straight through
    state_a, clips = micro_state()
    hist_a = train_all(state_a, clips)

    # run B: train scale 0, checkpoint, reload, train the rest
    state_b, _ = micro_state()
    pyr = build_pyramids(state_b, clips)
    hist_b0 = train_scale(state_b, None, 0, pyramids=pyr)
    save_state(state_b, tmp_path / "ckpt")
    resumed = load_state(tmp_path / "ckpt")
    hist_b12 = train_all(resumed, clips)

    losses_a = [h["total"] for h in hist_a]
    losses_b = [h["total"] for h in hist_b0 + hist_b12]
    # resume is bit-exact, not merely close
    np.testing.assert_array_equal(losses_a, losses_b)

    assert resumed.encoder.state_bytes() == state_a.encoder.state_bytes()
    for ga, gb in zip(state_a.generators, resumed.generators):
        assert ga.state_bytes() == gb.state_bytes()
    for n, critic in state_a.critics.items():
        assert critic.state_bytes() == resumed.critics[n].state_bytes()

    # fixed-seed sampling from either state is byte-identical
    sa = generate_random(state_a, seeding.stream(3, seeding.SAMPLE, 0))
    sb = generate_random(resumed, seeding.stream(3, seeding.SAMPLE, 0))
    assert sa.tobytes() == sb.tobytes()


def test_checkpoint_round_trip_and_guards(tmp_path):
    state, clips = micro_state()
    train_all(state, clips)
    save_state(state, tmp_path / "ckpt")
    loaded = load_state(tmp_path / "ckpt")
    assert loaded.trained_scale == state.trained_scale
    assert loaded.noise_amp == state.noise_amp
    assert loaded.encoder.state_bytes() == state.encoder.state_bytes()
    assert loaded.schedule == state.schedule

    with pytest.raises(StateError):
        load_state(tmp_path / "missing")
    # locked directory refuses a second writer
    with checkpoint_lock(tmp_path / "ckpt"):
        with pytest.raises(StateError, match="locked"):
            save_state(state, tmp_path / "ckpt")
    # a different config refuses to overwrite
    other, _ = micro_state(config=dataclasses.replace(MICRO, seed=6))
    with pytest.raises(StateError, match="different configuration"):
        save_state(other, tmp_path / "ckpt")


def test_build_pyramids_validates_clips():
    state, clips = micro_state()
    with pytest.raises(DataError):
        build_pyramids(state, [])
    with pytest.raises(DataError):
        build_pyramids(state, [micro_clip(frames=4)])
    rng = np.random.default_rng(0)
    mono = VideoTensor(rng.uniform(-1, 1, size=(3, 8, 8, 1)))
    with pytest.raises(DataError):
        build_pyramids(state, [mono])
