"""Pure-numpy implementations of the hot inner-loop kernels.

These are the reference/fallback versions; `serlab._speedups` provides the
compiled equivalents. Both sides must agree numerically (see
tests/test_kernels.py) so either can back the rest of the package.
"""

from __future__ import annotations

import numpy as np


def im2col_1d(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Unfold a (B, C, T) batch into (B, T_out, C*kernel) patch rows.

    Patch columns are ordered channel-major: (c0 k0, c0 k1, ..., c1 k0, ...).
    """
    b, c, t = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    t_pad = t + 2 * padding
    t_out = (t_pad - kernel) // stride + 1
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, t_out, kernel),
        strides=(s0, s1, s2 * stride, s2),
        writeable=False,
    )
    # (B, T_out, C, K) -> (B, T_out, C*K)
    return np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(b, t_out, c * kernel)


def col2im_1d(
    cols: np.ndarray, c: int, t: int, kernel: int, stride: int, padding: int
) -> np.ndarray:
    """Scatter-add (B, T_out, C*kernel) patch gradients back to (B, C, T)."""
    b, t_out, _ = cols.shape
    t_pad = t + 2 * padding
    out = np.zeros((b, c, t_pad), dtype=cols.dtype)
    patches = cols.reshape(b, t_out, c, kernel)
    for k in range(kernel):
        # positions k, k+stride, ... for each output step
        idx = np.arange(t_out) * stride + k
        np.add.at(out, (slice(None), slice(None), idx), patches[:, :, :, k].transpose(0, 2, 1))
    return out[:, :, padding : padding + t] if padding else out


def sinc_resample(x: np.ndarray, ratio: float, n_out: int, taps: int = 16) -> np.ndarray:
    """Band-limited resampling of a 1-D signal by `ratio` = out_rate/in_rate.

    Windowed-sinc (Hann) interpolation with a low-pass cutoff at the lower of
    the two Nyquist rates. `taps` is the one-sided tap count at the cutoff.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[0]
    cutoff = min(1.0, ratio)
    half = int(np.ceil(taps / cutoff))
    pos = np.arange(n_out, dtype=np.float64) / ratio
    base = np.floor(pos).astype(np.int64)
    k = np.arange(-half + 1, half + 1)
    idx = base[:, None] + k[None, :]
    frac = pos[:, None] - idx
    arg = cutoff * frac
    kern = cutoff * np.sinc(arg)
    win = 0.5 + 0.5 * np.cos(np.pi * arg / (half * cutoff + 1e-12))
    kern *= np.where(np.abs(arg) <= half * cutoff, win, 0.0)
    idx = np.clip(idx, 0, n_in - 1)
    gathered = x[idx]
    out = np.einsum("ij,ij->i", gathered, kern)
    return out


def bilinear_resize(src: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Bilinear resize of a 2-D matrix with corner-aligned sampling.

    Corner alignment makes same-size resizing an exact identity.
    """
    src = np.asarray(src)
    r_in, c_in = src.shape
    if r_in == rows and c_in == cols:
        return src.copy()
    out_dtype = src.dtype
    src = src.astype(np.float64, copy=False)

    def _axis_coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=np.int64), np.zeros(n_out), np.zeros(n_out, dtype=np.int64)
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.floor(pos).astype(np.int64)
        lo = np.minimum(lo, n_in - 2)
        return lo, pos - lo, lo + 1

    r_lo, r_frac, r_hi = _axis_coords(rows, r_in)
    c_lo, c_frac, c_hi = _axis_coords(cols, c_in)
    top = src[r_lo][:, c_lo] * (1 - c_frac) + src[r_lo][:, c_hi] * c_frac
    bot = src[r_hi][:, c_lo] * (1 - c_frac) + src[r_hi][:, c_hi] * c_frac
    out = top * (1 - r_frac[:, None]) + bot * r_frac[:, None]
    return out.astype(out_dtype, copy=False)
