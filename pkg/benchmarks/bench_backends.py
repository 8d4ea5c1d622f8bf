"""Timing comparison of the numba and numpy conv3d backends.

Runs the three hot kernels and one full training iteration on each available
backend, reports wall times, speedups, and the worst value difference between
backends (expected 0: both use the same accumulation structure).

Usage: python benchmarks/bench_backends.py [--repeats N] [--volume T,H,W]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from patchgen import kernels
from patchgen.core import RunConfig, VideoTensor, schedule_for_shape
from patchgen.hierarchy import build_pyramids, init_state, train_scale


def time_call(fn, repeats: int) -> float:
    fn()  # warmup: first numba call may compile
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(volume: tuple[int, int, int], repeats: int) -> dict:
    rng = np.random.default_rng(0)
    t, h, w = volume
    cin, cout, k = 16, 16, 3
    x = rng.standard_normal((t, h, w, cin))
    wgt = rng.standard_normal((k, k, k, cin, cout))
    b = rng.standard_normal(cout)
    dy = rng.standard_normal((t, h, w, cout))

    results = {}
    for name in kernels.available_backends():
        kernels.set_backend(name)
        results[name] = {
            "forward": time_call(lambda: kernels.conv3d_forward(x, wgt, b), repeats),
            "weight_grad": time_call(
                lambda: kernels.conv3d_weight_grad(x, dy, (k, k, k)), repeats
            ),
            "input_grad": time_call(lambda: kernels.conv3d_input_grad(dy, wgt), repeats),
            "values": (
                kernels.conv3d_forward(x, wgt, b),
                kernels.conv3d_weight_grad(x, dy, (k, k, k)),
                kernels.conv3d_input_grad(dy, wgt),
            ),
        }
    return results


def bench_training_iteration(repeats: int) -> dict:
    config = RunConfig(
        finest_scale=2,
        vae_levels=1,
        frame_strides=(1, 2),
        base_height=6,
        max_height=12,
        channels=8,
        latent_dim=4,
        blocks=3,
        iters_per_scale=1,
        critic_steps=2,
        seed=0,
    )
    rng = np.random.default_rng(1)
    clip = VideoTensor(rng.uniform(-1, 1, size=(3, 12, 12, 3)))
    results = {}
    for name in kernels.available_backends():
        kernels.set_backend(name)

        def run_scale0():
            schedule = schedule_for_shape(config, clip.frames, clip.height, clip.width)
            state = init_state(config, schedule, channels=3)
            train_scale(state, None, 0, pyramids=build_pyramids(state, [clip]))

        results[name] = {"train_scale0": time_call(run_scale0, repeats)}
    return results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5, help="timed repetitions (best kept)")
    parser.add_argument("--volume", default="8,32,32", help="kernel benchmark volume T,H,W")
    args = parser.parse_args()
    volume = tuple(int(p) for p in args.volume.split(","))
    if len(volume) != 3:
        parser.error("--volume wants T,H,W")

    print(f"available backends: {', '.join(kernels.available_backends())}")
    print(f"kernel volume {volume}, best of {args.repeats}\n")

    kernel_results = bench_kernels(volume, args.repeats)
    rows = ["forward", "weight_grad", "input_grad"]
    header = f"{'kernel':<14}" + "".join(f"{n:>12}" for n in kernel_results)
    if len(kernel_results) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for row in rows:
        cells = f"{row:<14}"
        times = [kernel_results[n][row] for n in kernel_results]
        cells += "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            cells += f"{times[0] / times[1]:>9.1f}x"
        print(cells)

    if len(kernel_results) == 2:
        names = list(kernel_results)
        worst = max(
            float(np.max(np.abs(a - b)))
            for a, b in zip(kernel_results[names[0]]["values"], kernel_results[names[1]]["values"])
        )
        print(f"\nworst value difference between backends: {worst:.3e}")

    print("\nfull scale-0 training pass (micro model):")
    train_results = bench_training_iteration(max(2, args.repeats // 2))
    for name, res in train_results.items():
        print(f"  {name:<8} {res['train_scale0'] * 1e3:>10.2f}ms")
    if len(train_results) == 2:
        a, b = (train_results[n]["train_scale0"] for n in train_results)
        print(f"  speedup  {a / b:>9.1f}x")


if __name__ == "__main__":
    main()
