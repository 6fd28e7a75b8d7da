"""Compare the compiled and numpy im2col/col2im backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints one CSV row per (backend, kernel, shape) with the median time in
milliseconds, then a conv2d forward+backward timing through autodiff using
each backend.
"""
import argparse
import statistics
import time

import numpy as np

from refliter import autodiff as ad
from refliter import kernels

SHAPES = [
    # (N, C, H, W, stride)
    (1, 16, 64, 64, 1),
    (1, 32, 32, 32, 2),
    (4, 64, 16, 16, 1),
    (1, 48, 64, 64, 1),
]


def _median_ms(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * statistics.median(times)


def bench_kernels(repeat):
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    for n, c, h, w, s in SHAPES:
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        ref_cols = None
        for name, mod in backends.items():
            cols = mod.im2col(x, 3, s, 1)
            if ref_cols is None:
                ref_cols = cols
            assert np.array_equal(cols, ref_cols), f"{name} im2col disagrees"
            t_fwd = _median_ms(lambda: mod.im2col(x, 3, s, 1), repeat)
            t_bwd = _median_ms(lambda: mod.col2im(cols, x.shape, 3, s, 1), repeat)
            shape = f"{n}x{c}x{h}x{w}/s{s}"
            print(f"{name},im2col,{shape},{t_fwd:.3f}")
            print(f"{name},col2im,{shape},{t_bwd:.3f}")


def bench_conv(repeat):
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.standard_normal((1, 32, 64, 64)), requires_grad=True)
    wt = ad.Tensor(rng.standard_normal((32, 32, 3, 3)) * 0.1, requires_grad=True)

    def step():
        x.grad = wt.grad = None
        ad.backward(ad.sum_all(ad.conv2d(x, wt, padding=1)))

    saved = kernels.im2col, kernels.col2im
    try:
        for name, mod in kernels.available_backends().items():
            kernels.im2col, kernels.col2im = mod.im2col, mod.col2im
            print(f"{name},conv2d_fwd_bwd,1x32x64x64,{_median_ms(step, repeat):.3f}")
    finally:
        kernels.im2col, kernels.col2im = saved


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args()
    print("backend,kernel,shape,median_ms")
    bench_kernels(args.repeat)
    bench_conv(args.repeat)


if __name__ == "__main__":
    main()
