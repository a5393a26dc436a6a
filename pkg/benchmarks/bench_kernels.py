"""Timing comparison of the compiled and pure-numpy kernel backends.

Times each of the six hot kernels on model-representative shapes, then one
full optimizer step (forward, backward, Adam) of a width-reduced network
per backend. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from tclnet import kernels
from tclnet.data import Sample
from tclnet.heatmap import CenterLabel
from tclnet.model import ModelConfig
from tclnet.training import TrainConfig, train


def best_of(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    """(label, args-builder) pairs shaped like the default model's layers."""
    x_stem = rng.standard_normal((2, 1, 512, 512)).astype(np.float32)
    x_body = rng.standard_normal((2, 32, 64, 64)).astype(np.float32)
    cols_body = kernels.im2col(x_body, 3, 3, 1, 1)
    pool_in = rng.standard_normal((2, 64, 64, 64)).astype(np.float32)
    _, pool_idx = kernels.maxpool2x2_forward(pool_in)
    pool_g = rng.standard_normal((2, 64, 32, 32)).astype(np.float32)
    up_in = rng.standard_normal((2, 64, 32, 32)).astype(np.float32)
    up_g = rng.standard_normal((2, 64, 64, 64)).astype(np.float32)
    return [
        ("im2col 7x7 s2 (stem)", lambda: kernels.im2col(x_stem, 7, 7, 2, 3)),
        ("im2col 3x3 s1 (body)", lambda: kernels.im2col(x_body, 3, 3, 1, 1)),
        ("col2im 3x3 s1 (body)",
         lambda: kernels.col2im(cols_body, 2, 32, 64, 64, 3, 3, 1, 1)),
        ("maxpool 2x2 forward",
         lambda: kernels.maxpool2x2_forward(pool_in)),
        ("maxpool 2x2 backward",
         lambda: kernels.maxpool2x2_backward(pool_g, pool_idx)),
        ("upsample 2x forward", lambda: kernels.upsample2x_forward(up_in)),
        ("upsample 2x backward", lambda: kernels.upsample2x_backward(up_g)),
    ]


def step_case(rng):
    """One epoch of two batches on a width-/8 network at 128px."""
    images = rng.random((4, 128, 128), dtype=np.float32)
    samples = [
        Sample(id=f"b{i}", image=images[i],
               label=CenterLabel(40.0 + 10 * i, 90.0 - 5 * i), eyed=True)
        for i in range(4)
    ]
    mc = ModelConfig(input_size=128, width_divisor=8)
    tc = TrainConfig(epochs=1, batch_size=2, crop_to=128, sigma=5.0,
                     augment=False, seed=0)
    return lambda: train(samples, mc, tc)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per case (best is reported)")
    args = parser.parse_args()

    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled extension not built; timing numpy only")
    rng = np.random.default_rng(0)
    rows = []
    for label, fn in kernel_cases(rng) + [("train step (width/8, 128px)",
                                           step_case(rng))]:
        timings = {}
        for backend in names:
            kernels.use_backend(backend)
            timings[backend] = best_of(fn, args.repeats)
        rows.append((label, timings))
    kernels.use_backend(names[0])

    width = max(len(label) for label, _ in rows)
    header = f"{'case':<{width}}  " + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, timings in rows:
        cells = "".join(f"{timings[n] * 1e3:>10.2f}ms" for n in names)
        if len(names) == 2:
            cells += f"{timings['numpy'] / timings['cython']:>9.2f}x"
        print(f"{label:<{width}}  {cells}")


if __name__ == "__main__":
    main()
