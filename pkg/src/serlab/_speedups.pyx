# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: conv1d patch gather/scatter, windowed-sinc
resampling, bilinear resize. Mirrors serlab.kernels.numpy_impl."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, cos, fabs, floor, sin

cnp.import_array()

DEF PI = 3.141592653589793


def im2col_1d(x, int kernel, int stride, int padding):
    x = np.ascontiguousarray(x, dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] xv = x
    cdef Py_ssize_t b = xv.shape[0], c = xv.shape[1], t = xv.shape[2]
    cdef Py_ssize_t t_out = (t + 2 * padding - kernel) // stride + 1
    out = np.zeros((b, t_out, c * kernel), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] ov = out
    cdef Py_ssize_t i, j, ch, k, src
    for i in range(b):
        for j in range(t_out):
            for ch in range(c):
                for k in range(kernel):
                    src = j * stride + k - padding
                    if 0 <= src < t:
                        ov[i, j, ch * kernel + k] = xv[i, ch, src]
    return out


def col2im_1d(cols, int c, int t, int kernel, int stride, int padding):
    cols = np.ascontiguousarray(cols, dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] cv = cols
    cdef Py_ssize_t b = cv.shape[0], t_out = cv.shape[1]
    out = np.zeros((b, c, t), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] ov = out
    cdef Py_ssize_t i, j, ch, k, dst
    for i in range(b):
        for j in range(t_out):
            for ch in range(c):
                for k in range(kernel):
                    dst = j * stride + k - padding
                    if 0 <= dst < t:
                        ov[i, ch, dst] += cv[i, j, ch * kernel + k]
    return out


def sinc_resample(x, double ratio, Py_ssize_t n_out, int taps=16):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.float64_t[::1] xv = x
    cdef Py_ssize_t n_in = xv.shape[0]
    cdef double cutoff = ratio if ratio < 1.0 else 1.0
    cdef Py_ssize_t half = <Py_ssize_t>ceil(taps / cutoff)
    out = np.zeros(n_out, dtype=np.float64)
    cdef cnp.float64_t[::1] ov = out
    cdef double win_denom = half * cutoff + 1e-12
    cdef Py_ssize_t n, k, idx, base
    cdef double pos, frac, arg, kern, acc, sample
    for n in range(n_out):
        pos = n / ratio
        base = <Py_ssize_t>floor(pos)
        acc = 0.0
        for k in range(-half + 1, half + 1):
            idx = base + k
            frac = pos - idx
            arg = cutoff * frac
            if fabs(arg) > half * cutoff:
                continue
            if arg == 0.0:
                kern = cutoff
            else:
                kern = cutoff * sin(PI * arg) / (PI * arg)
            kern *= 0.5 + 0.5 * cos(PI * arg / win_denom)
            if idx < 0:
                idx = 0
            elif idx >= n_in:
                idx = n_in - 1
            acc += xv[idx] * kern
        ov[n] = acc
    return out


def bilinear_resize(src, Py_ssize_t rows, Py_ssize_t cols):
    src_arr = np.ascontiguousarray(src, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] sv = src_arr
    cdef Py_ssize_t r_in = sv.shape[0], c_in = sv.shape[1]
    if r_in == rows and c_in == cols:
        return np.array(src, copy=True)
    out = np.zeros((rows, cols), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] ov = out
    cdef Py_ssize_t i, j, r0, r1, c0, c1
    cdef double rp, cp, rf, cf, top, bot
    for i in range(rows):
        if rows == 1 or r_in == 1:
            r0 = 0
            r1 = 0
            rf = 0.0
        else:
            rp = i * (r_in - 1.0) / (rows - 1.0)
            r0 = <Py_ssize_t>floor(rp)
            if r0 > r_in - 2:
                r0 = r_in - 2
            r1 = r0 + 1
            rf = rp - r0
        for j in range(cols):
            if cols == 1 or c_in == 1:
                c0 = 0
                c1 = 0
                cf = 0.0
            else:
                cp = j * (c_in - 1.0) / (cols - 1.0)
                c0 = <Py_ssize_t>floor(cp)
                if c0 > c_in - 2:
                    c0 = c_in - 2
                c1 = c0 + 1
                cf = cp - c0
            top = sv[r0, c0] * (1.0 - cf) + sv[r0, c1] * cf
            bot = sv[r1, c0] * (1.0 - cf) + sv[r1, c1] * cf
            ov[i, j] = top * (1.0 - rf) + bot * rf
    arr = np.asarray(out)
    if np.asarray(src).dtype != np.float64:
        arr = arr.astype(np.asarray(src).dtype)
    return arr
