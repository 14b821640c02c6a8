#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallbacks.

Run: python3 benches/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from serlab import kernels
from serlab.kernels import numpy_impl


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


CASES = {
    "im2col_1d (64,80,400) k3 s2": lambda k: k.im2col_1d(_X, 3, 2, 1),
    "col2im_1d (64,200,240)": lambda k: k.col2im_1d(_COLS, 80, 400, 3, 2, 1),
    "sinc_resample 48k->16k": lambda k: k.sinc_resample(_SIG, 1.0 / 3.0, 16000),
    "bilinear_resize 60x300 -> 80x400": lambda k: k.bilinear_resize(_MAT, 80, 400),
}

_rng = np.random.default_rng(0)
_X = _rng.standard_normal((64, 80, 400)).astype(np.float32)
_COLS = _rng.standard_normal((64, 200, 240)).astype(np.float32)
_SIG = _rng.standard_normal(48000)
_MAT = _rng.standard_normal((60, 300))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not kernels.compiled_available():
        print("compiled extension not built; benchmarking the numpy kernels only")
    print(f"{'kernel':40s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, fn in CASES.items():
        t_np = timeit(lambda: fn(numpy_impl), args.repeats)
        if kernels.compiled_available():
            kernels.use_fallback(False)
            from serlab import _speedups

            t_ext = timeit(lambda: fn(_speedups), args.repeats)
            print(f"{name:40s} {t_np * 1e3:8.2f}ms {t_ext * 1e3:8.2f}ms {t_np / t_ext:7.1f}x")
        else:
            print(f"{name:40s} {t_np * 1e3:8.2f}ms {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
