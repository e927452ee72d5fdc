#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Times the hot kernels (3-D/1-D convolution forward + both gradients, max
pooling, SGBM aggregation) on shapes representative of the pipeline: the
video branch at desk scale, the eye branch at paper scale, and a stereo
pair at frame resolution.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from sickfuse import backend


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, make_args, kernels, repeats):
    rows = []
    args = make_args()
    for impl_name, impl in kernels.items():
        fn = lambda: impl(*args)
        fn()  # warm up
        rows.append((impl_name, timeit(fn, repeats)))
    base = dict(rows)["numpy"]
    print(f"{name:<42s}", end="")
    for impl_name, seconds in rows:
        speedup = base / seconds if seconds > 0 else float("inf")
        print(f"  {impl_name}: {seconds * 1e3:9.2f} ms ({speedup:4.1f}x)", end="")
    print()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    try:
        native = backend.get_backend("native")
    except ImportError:
        print("compiled extension not built; run pip install -e . first")
        return 1
    numpy_k = backend.get_backend("numpy")
    rng = np.random.default_rng(0)
    print(f"active backend: {backend.backend_name()}\n")

    # conv3d on the toy video branch (batch 16, 12x16x16, 3->8 channels)
    x = rng.normal(size=(16, 12, 16, 16, 3))
    k = rng.normal(size=(3, 3, 3, 3, 8))
    bench_case("conv3d fwd (16,12,16,16,3)->8",
               lambda: (x, k),
               {"native": native.conv3d_forward, "numpy": numpy_k.conv3d_forward},
               args.repeats)
    g = rng.normal(size=(16, 10, 14, 14, 8))
    bench_case("conv3d grad-input",
               lambda: (g, k, x.shape),
               {"native": native.conv3d_grad_input,
                "numpy": numpy_k.conv3d_grad_input}, args.repeats)
    bench_case("conv3d grad-kernel",
               lambda: (x, g, k.shape),
               {"native": native.conv3d_grad_kernel,
                "numpy": numpy_k.conv3d_grad_kernel}, args.repeats)

    # one full-scale video conv (single frame stack, few filters)
    x_big = rng.normal(size=(1, 60, 128, 128, 3))
    k_big = rng.normal(size=(3, 3, 3, 3, 4))
    bench_case("conv3d fwd (1,60,128,128,3)->4",
               lambda: (x_big, k_big),
               {"native": native.conv3d_forward, "numpy": numpy_k.conv3d_forward},
               max(1, args.repeats // 2))

    # conv1d on the eye branch at paper scale (batch 512 x 4 subsequences)
    x1 = rng.normal(size=(2048, 15, 9))
    k1 = rng.normal(size=(3, 9, 64))
    bench_case("conv1d fwd (2048,15,9)->64",
               lambda: (x1, k1),
               {"native": native.conv1d_forward, "numpy": numpy_k.conv1d_forward},
               args.repeats)

    # pooling on the video branch
    xp = rng.normal(size=(16, 12, 16, 16, 8))
    bench_case("maxpool3d 2x2x2 s2 (16,12,16,16,8)",
               lambda: (xp, (2, 2, 2), (2, 2, 2)),
               {"native": native.maxpool_forward, "numpy": numpy_k.maxpool_forward},
               args.repeats)

    # SGBM aggregation at frame resolution
    cost = (rng.random((256, 256, 64)) * 1000).astype(np.float32)
    bench_case("sgbm aggregate 256x256x64",
               lambda: (cost, np.float32(200.0), np.float32(800.0)),
               {"native": native.sgbm_aggregate, "numpy": numpy_k.sgbm_aggregate},
               max(1, args.repeats // 2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
