#!/usr/bin/env python3
"""Benchmark the splat rasterizer backends: compiled kernel vs numpy fallback.

Runs forward and backward passes over growing scene sizes and reports
timings plus the max deviation between backends.

    python benchmarks/bench_splat.py [--repeat 5]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from tok4d import splat  # noqa: E402
from tok4d.patchify import Camera  # noqa: E402
from tok4d.splat import RenderTarget, render_world, render_world_grad  # noqa: E402


def scene(rng, n_gaussians):
    pos = rng.uniform(-0.8, 0.8, size=(n_gaussians, 3))
    col = rng.uniform(size=(n_gaussians, 3))
    scale = rng.uniform(0.05, 0.5, size=n_gaussians)
    alpha = rng.uniform(0.1, 0.9, size=n_gaussians)
    return pos, col, scale, alpha


def camera(size):
    rot = np.diag([1.0, -1.0, -1.0])
    return Camera(np.zeros((size, size, 3)), rot,
                  -rot @ np.array([0.0, 0.0, 3.0]), float(size), size / 2, size / 2)


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    if not splat.have_compiled():
        print("compiled kernel not built (python setup.py build_ext --inplace); "
              "benchmarking the numpy path only")
    rng = np.random.default_rng(0)
    print(f"{'scene':>22} {'numpy fwd':>11} {'cython fwd':>11} {'speedup':>8} "
          f"{'numpy bwd':>11} {'cython bwd':>11} {'speedup':>8}  max|diff|")
    # the numpy path materializes (splats, H, W) weight maps, so scenes are
    # kept at desk scale; the compiled kernel streams and scales further
    for size, n in [(32, 64), (32, 256), (64, 256), (64, 1024), (128, 512)]:
        cam = camera(size)
        target = RenderTarget(size, size, background=[0.1, 0.1, 0.1])
        pos, col, scale, alpha = scene(rng, n)
        cot = rng.normal(size=(size, size, 3))

        t_np, img_np = timed(lambda: render_world(pos, col, scale, alpha, cam,
                                                  target, backend="numpy"), args.repeat)
        tb_np, g_np = timed(lambda: render_world_grad(pos, col, scale, alpha, cam,
                                                      target, cot, backend="numpy"),
                            args.repeat)
        if splat.have_compiled():
            t_cy, img_cy = timed(lambda: render_world(pos, col, scale, alpha, cam,
                                                      target, backend="cython"),
                                 args.repeat)
            tb_cy, g_cy = timed(lambda: render_world_grad(pos, col, scale, alpha,
                                                          cam, target, cot,
                                                          backend="cython"),
                                args.repeat)
            diff = max(np.abs(img_np - img_cy).max(),
                       max(np.abs(a - b).max() for a, b in zip(g_np, g_cy)))
            print(f"{size}x{size} px, {n:5d} splats "
                  f"{t_np * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms {t_np / t_cy:7.1f}x "
                  f"{tb_np * 1e3:9.2f}ms {tb_cy * 1e3:9.2f}ms {tb_np / tb_cy:7.1f}x "
                  f"{diff:9.2e}")
        else:
            print(f"{size}x{size} px, {n:5d} splats "
                  f"{t_np * 1e3:9.2f}ms {'-':>11} {'-':>8} "
                  f"{tb_np * 1e3:9.2f}ms {'-':>11} {'-':>8}")


if __name__ == "__main__":
    main()
