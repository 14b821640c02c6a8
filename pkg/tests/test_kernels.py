"""Compiled-vs-numpy kernel equivalence and kernel-level properties."""

import numpy as np
import pytest

from serlab import kernels
from serlab.kernels import numpy_impl


requires_ext = pytest.mark.skipif(
    not kernels.compiled_available(), reason="compiled extension not built"
)


@pytest.fixture(autouse=True)
def restore_backend():
    yield
    kernels.use_fallback(False)


def test_backend_reporting():
    kernels.use_fallback(True)
    assert kernels.backend() == "numpy"
    kernels.use_fallback(False)
    if kernels.compiled_available():
        assert kernels.backend() == "compiled"


class TestIm2col:
    @requires_ext
    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 1)])
    def test_matches_numpy(self, stride, padding):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 5, 17)).astype(np.float32)
        kernels.use_fallback(False)
        a = kernels.im2col_1d(x, 3, stride, padding)
        b = numpy_impl.im2col_1d(x, 3, stride, padding)
        np.testing.assert_allclose(a, b, atol=1e-6)

    @requires_ext
    def test_col2im_matches_numpy(self):
        rng = np.random.default_rng(1)
        cols = rng.standard_normal((2, 8, 12)).astype(np.float32)
        a = kernels.col2im_1d(cols, 4, 17, 3, 2, 1)
        b = numpy_impl.col2im_1d(cols, 4, 17, 3, 2, 1)
        np.testing.assert_allclose(a, b, atol=1e-6)

    @pytest.mark.parametrize("use_np", [True, False])
    def test_col2im_adjoint_of_im2col(self, use_np):
        # <im2col(x), y> == <x, col2im(y)> since the ops are transposes
        if not use_np and not kernels.compiled_available():
            pytest.skip("no extension")
        kernels.use_fallback(use_np)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 3, 11)).astype(np.float32)
        y = rng.standard_normal((2, 6, 9)).astype(np.float32)  # t_out = (11+2-3)//2+1
        cols = kernels.im2col_1d(x, 3, 2, 1)
        assert cols.shape == y.shape
        lhs = float(np.sum(cols.astype(np.float64) * y))
        rhs = float(np.sum(x.astype(np.float64) * kernels.col2im_1d(y, 3, 11, 3, 2, 1)))
        assert abs(lhs - rhs) < 1e-3


class TestSincResample:
    @requires_ext
    def test_matches_numpy(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(4000)
        for ratio in (0.5, 1.0 / 3.0, 2.0):
            n_out = int(round(x.size * ratio))
            a = kernels.sinc_resample(x, ratio, n_out)
            b = numpy_impl.sinc_resample(x, ratio, n_out)
            np.testing.assert_allclose(a, b, atol=1e-9)

    @pytest.mark.parametrize("use_np", [True, False])
    def test_tone_survives_downsample(self, use_np):
        if not use_np and not kernels.compiled_available():
            pytest.skip("no extension")
        kernels.use_fallback(use_np)
        rate = 48000
        t = np.arange(rate) / rate
        x = np.sin(2 * np.pi * 1000 * t)
        out = kernels.sinc_resample(x, 1.0 / 3.0, 16000)
        spec = np.abs(np.fft.rfft(out))
        freqs = np.fft.rfftfreq(out.size, 1 / 16000)
        assert abs(freqs[np.argmax(spec)] - 1000.0) <= freqs[1]
        # amplitude roughly preserved in the passband
        assert abs(np.abs(out[200:-200]).max() - 1.0) < 0.05


class TestBilinearResize:
    @requires_ext
    def test_matches_numpy(self):
        rng = np.random.default_rng(4)
        src = rng.standard_normal((33, 47))
        for rows, cols in ((80, 100), (20, 30), (33, 47), (1, 10)):
            a = kernels.bilinear_resize(src, rows, cols)
            b = numpy_impl.bilinear_resize(src, rows, cols)
            np.testing.assert_allclose(a, b, atol=1e-9)

    @pytest.mark.parametrize("use_np", [True, False])
    def test_same_size_identity(self, use_np):
        if not use_np and not kernels.compiled_available():
            pytest.skip("no extension")
        kernels.use_fallback(use_np)
        src = np.random.default_rng(5).standard_normal((12, 9)).astype(np.float32)
        np.testing.assert_array_equal(kernels.bilinear_resize(src, 12, 9), src)

    @pytest.mark.parametrize("use_np", [True, False])
    def test_corners_preserved(self, use_np):
        if not use_np and not kernels.compiled_available():
            pytest.skip("no extension")
        kernels.use_fallback(use_np)
        src = np.random.default_rng(6).standard_normal((7, 11))
        out = kernels.bilinear_resize(src, 15, 23)
        np.testing.assert_allclose(
            [out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]],
            [src[0, 0], src[0, -1], src[-1, 0], src[-1, -1]],
            atol=1e-12,
        )
