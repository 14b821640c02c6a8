"""Hot-kernel dispatch: compiled extension when built, numpy otherwise.

`serlab._speedups` is an optional Cython module covering the loop-bound
kernels (patch gather/scatter for conv1d, windowed-sinc resampling, bilinear
resize). Import failure is not an error; the numpy implementations are the
behavioural reference. `backend()` reports which one is live and
`use_fallback()` lets the benchmark pin either side.
"""

from __future__ import annotations

from serlab.kernels import numpy_impl

try:
    from serlab import _speedups as _ext
except ImportError:
    _ext = None

_active = _ext if _ext is not None else numpy_impl


def backend() -> str:
    return "compiled" if _active is not numpy_impl else "numpy"


def compiled_available() -> bool:
    return _ext is not None


def use_fallback(flag: bool) -> None:
    """Force the numpy kernels (True) or restore the default selection."""
    global _active
    _active = numpy_impl if flag or _ext is None else _ext


def im2col_1d(x, kernel, stride, padding):
    return _active.im2col_1d(x, kernel, stride, padding)


def col2im_1d(cols, c, t, kernel, stride, padding):
    return _active.col2im_1d(cols, c, t, kernel, stride, padding)


def sinc_resample(x, ratio, n_out, taps=16):
    return _active.sinc_resample(x, ratio, n_out, taps)


def bilinear_resize(src, rows, cols):
    return _active.bilinear_resize(src, rows, cols)
