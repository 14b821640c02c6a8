"""Augmentation contracts: SNR accuracy, involutions, shape preservation,
mask geometry, view counts, and determinism."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from serlab import dsp
from serlab.augment import (
    AugmentError,
    AugmentSpec,
    add_noise_snr,
    apply_gain,
    augment_waveform,
    invert_polarity,
    make_views,
    mixup,
    random_resize_crop,
    spec_augment,
    spectral_stretch,
    speed_perturb,
)
from serlab.rng import RngStream


def _sine(freq=440.0, duration=1.0, rate=16000, amp=0.4):
    t = np.arange(int(duration * rate)) / rate
    return dsp.AudioClip((amp * np.sin(2 * np.pi * freq * t)).astype(np.float32), rate)


def _mel(frames=200, seed=0):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-1.5, 1.0, (80, frames)).astype(np.float32)
    return dsp.MelSpectrogram(vals, 160, 16000)


def _measured_snr_db(clean, noisy):
    noise = noisy.samples.astype(np.float64) - clean.samples.astype(np.float64)
    p_sig = np.mean(clean.samples.astype(np.float64) ** 2)
    p_noise = np.mean(noise**2)
    return 10.0 * np.log10(p_sig / p_noise)


class TestNoise:
    def test_unit_power_10db(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(16000).astype(np.float32)
        x /= np.sqrt(np.mean(x**2)) * 4.0  # rms 0.25, no clipping risk
        clip = dsp.AudioClip(x, 16000)
        noisy = add_noise_snr(clip, 10.0, np.random.default_rng(1))
        p_noise = np.mean((noisy.samples - clip.samples).astype(np.float64) ** 2)
        p_sig = np.mean(clip.samples.astype(np.float64) ** 2)
        assert abs(p_noise - p_sig / 10.0) / (p_sig / 10.0) < 0.01

    def test_20db_noise_rms(self):
        clip = _sine(amp=0.3 * np.sqrt(2))  # rms 0.3
        noisy = add_noise_snr(clip, 20.0, np.random.default_rng(2))
        noise_rms = np.sqrt(np.mean((noisy.samples - clip.samples).astype(np.float64) ** 2))
        assert abs(noise_rms - 0.03) / 0.03 < 0.01

    def test_snr_accuracy_averaged(self):
        clip = _sine(220, 1.0, amp=0.3)
        errs = []
        for i in range(100):
            noisy = add_noise_snr(clip, 15.0, np.random.default_rng(i))
            errs.append(_measured_snr_db(clip, noisy) - 15.0)
        assert abs(np.mean(errs)) <= 0.1

    def test_all_zero_clip_unchanged_with_warning(self):
        clip = dsp.AudioClip(np.zeros(1000, dtype=np.float32), 16000)
        clip.samples[:] = 0.0
        with pytest.warns(UserWarning, match="SNR undefined"):
            out = add_noise_snr(clip, 10.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.samples, 0.0)


class TestPolarityAndGain:
    def test_involution_exact(self):
        clip = _sine(317)
        twice = invert_polarity(invert_polarity(clip))
        np.testing.assert_array_equal(twice.samples, clip.samples)

    def test_silence_fixed_point(self):
        clip = dsp.AudioClip(np.zeros(500, dtype=np.float32), 16000)
        out = invert_polarity(clip)
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_log_mel_sign_invariant(self):
        clip = _sine(523, 0.5)
        a = dsp.log_mel(clip).values
        b = dsp.log_mel(invert_polarity(clip)).values
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_zero_db_identity(self):
        clip = _sine(100)
        out = apply_gain(clip, 0.0)
        np.testing.assert_allclose(out.samples, clip.samples, atol=1e-7)

    def test_six_db_doubles_amplitude(self):
        clip = _sine(100, amp=0.2)
        out = apply_gain(clip, 6.0206)
        np.testing.assert_allclose(out.samples, clip.samples * 2.0, rtol=2e-5)

    def test_minus_20db_rms(self):
        clip = _sine(100, amp=0.5 * np.sqrt(2))  # rms 0.5
        out = apply_gain(clip, -20.0)
        rms = np.sqrt(np.mean(out.samples.astype(np.float64) ** 2))
        assert abs(rms - 0.05) < 1e-4

    def test_clipping_fraction_reported(self):
        clip = _sine(100, amp=0.9)
        stats = {}
        apply_gain(clip, 6.0, stats)
        assert 0.0 < stats["clipped_fraction"] < 1.0


class TestSpeedPerturb:
    def test_identity(self):
        clip = _sine(100)
        out = speed_perturb(clip, 1.0)
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_length_arithmetic(self):
        clip = dsp.AudioClip(np.full(16000, 0.1, dtype=np.float32), 16000)
        assert speed_perturb(clip, 1.1).samples.size == 14545

    def test_pitch_scales_with_speed(self):
        clip = _sine(1000, 1.0)
        out = speed_perturb(clip, 0.9)
        spec = np.abs(np.fft.rfft(out.samples))
        freqs = np.fft.rfftfreq(out.samples.size, 1 / 16000)
        peak = freqs[np.argmax(spec)]
        assert abs(peak - 900.0) <= freqs[1] - freqs[0]

    def test_bad_factor_rejected(self):
        with pytest.raises(AugmentError):
            speed_perturb(_sine(100), -1.0)


class TestSpectralStretch:
    def test_identity_factor(self):
        spec = _mel()
        out = spectral_stretch(spec, 1.0)
        np.testing.assert_allclose(out.values, spec.values, atol=1e-7)

    def test_band_moves_to_scaled_bin(self):
        vals = np.full((80, 100), -1.5, dtype=np.float32)
        vals[20, :] = 1.0
        spec = dsp.MelSpectrogram(vals, 160, 16000)
        out = spectral_stretch(spec, 2.0)
        peak_bins = np.argmax(out.values, axis=0)
        assert np.abs(peak_bins - 40).max() <= 1

    def test_energy_bookkeeping_voice_like(self):
        # energy concentrated in the low bins, as for the synthetic voices
        rng = np.random.default_rng(4)
        base = np.linspace(0, 1, 80)
        power = np.exp(-6.0 * base)[:, None] * rng.uniform(0.5, 1.5, (80, 120))
        spec = dsp.MelSpectrogram(dsp.power_to_values(power), 160, 16000)
        e0 = dsp.mel_power(spec).sum()
        for factor in (0.9, 0.95, 1.05, 1.1):
            e1 = dsp.mel_power(spectral_stretch(spec, factor)).sum()
            assert abs(e1 - e0) / e0 <= 0.05

    def test_shape_preserved(self):
        out = spectral_stretch(_mel(137), 1.07)
        assert out.values.shape == (80, 137)


class TestSpecAugment:
    def test_zero_masks_identity(self):
        spec = _mel()
        out = spec_augment(spec, 0, 15, 0, 50, np.random.default_rng(0))
        np.testing.assert_array_equal(out.values, spec.values)

    def test_single_freq_mask_geometry(self):
        spec = _mel(400)
        out = spec_augment(spec, 1, 10, 0, 0, np.random.default_rng(1))
        changed = np.sum(out.values != spec.values)
        assert changed <= 10 * 400
        # changed rows form one contiguous band filled with the mean
        rows = np.unique(np.nonzero(out.values != spec.values)[0])
        if rows.size:
            assert rows.max() - rows.min() + 1 == rows.size
            np.testing.assert_allclose(out.values[rows], spec.values.mean(), atol=1e-6)

    def test_unmasked_cells_bit_identical(self):
        spec = _mel(150)
        out = spec_augment(spec, 2, 15, 2, 50, np.random.default_rng(2))
        mask = out.values != spec.values
        np.testing.assert_array_equal(out.values[~mask], spec.values[~mask])

    def test_masked_fraction_bound(self):
        spec = _mel(200)
        f, t = 80, 200
        nf, mf, nt, mt = 2, 15, 2, 50
        for i in range(20):
            out = spec_augment(spec, nf, mf, nt, mt, np.random.default_rng(i))
            frac = np.mean(out.values != spec.values)
            assert frac <= (nf * mf * t + nt * mt * f) / (f * t)

    def test_width_exceeding_axis_rejected(self):
        with pytest.raises(AugmentError):
            spec_augment(_mel(30), 1, 15, 1, 50, np.random.default_rng(0))


class TestMixup:
    def test_ratio_zero_keeps_first(self):
        a, b = _mel(seed=1), _mel(seed=2)
        out = mixup(a, b, 0.0)
        np.testing.assert_allclose(out.values, a.values, atol=1e-6)

    def test_ratio_one_keeps_second(self):
        a, b = _mel(seed=3), _mel(seed=4)
        out = mixup(a, b, 1.0)
        np.testing.assert_allclose(out.values, b.values, atol=1e-6)

    def test_equal_inputs_fixed_point(self):
        a = _mel(seed=5)
        out = mixup(a, dsp.MelSpectrogram(a.values.copy(), 160, 16000), 0.37)
        np.testing.assert_allclose(out.values, a.values, atol=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(AugmentError, match="shape"):
            mixup(_mel(100), _mel(101), 0.2)


class TestRandomResizeCrop:
    def test_full_scale_identity(self):
        spec = _mel(90)
        out = random_resize_crop(spec, ((1.0, 1.0), (1.0, 1.0)), np.random.default_rng(0))
        np.testing.assert_allclose(out.values, spec.values, atol=1e-7)

    def test_shape_contract_many_draws(self):
        spec = _mel(111)
        for i in range(200):
            out = random_resize_crop(spec, ((0.6, 1.0), (0.6, 1.0)), np.random.default_rng(i))
            assert out.values.shape == (80, 111)

    def test_constant_input_constant_output(self):
        spec = dsp.MelSpectrogram(np.full((80, 60), 0.25, dtype=np.float32), 160, 16000)
        out = random_resize_crop(spec, ((0.6, 1.0), (0.6, 1.0)), np.random.default_rng(7))
        np.testing.assert_allclose(out.values, 0.25, atol=1e-6)

    def test_bad_scales_rejected(self):
        with pytest.raises(AugmentError):
            random_resize_crop(_mel(50), ((0.0, 1.0), (0.5, 1.0)), np.random.default_rng(0))


class TestMakeViews:
    def test_cl_adapt_two_views_first_clean(self):
        clip = _sine(440, 1.2)
        views = make_views(clip, "cl_adapt", AugmentSpec(), RngStream(0).split("v"), 400)
        assert len(views) == 2
        clean = dsp.crop_or_pad(dsp.log_mel(clip), 400, train_mode=False)
        np.testing.assert_array_equal(views[0].values, clean.values)

    def test_byol_supervised_three_views(self):
        base = dsp.crop_or_pad(dsp.log_mel(_sine(330, 1.0)), 300)
        views = make_views(base, "byol_supervised", AugmentSpec(), RngStream(1).split("v"), 300)
        assert len(views) == 3
        assert all(v.values.shape == (80, 300) for v in views)

    def test_baseline_single_view(self):
        views = make_views(_sine(220, 1.0), "baseline", AugmentSpec(), RngStream(2).split("v"), 400)
        assert len(views) == 1

    def test_byol_ssl_views_differ(self):
        base = dsp.crop_or_pad(dsp.log_mel(_sine(550, 1.0)), 300)
        differing = 0
        n = 1000
        for i in range(n):
            v1, v2 = make_views(base, "byol_ssl", AugmentSpec(), RngStream(i).split("mc"), 300)
            if np.mean(v1.values != v2.values) >= 0.01:
                differing += 1
        assert differing >= 0.99 * n

    def test_unknown_pipeline_rejected(self):
        with pytest.raises(AugmentError, match="unknown pipeline"):
            make_views(_sine(220), "nope", AugmentSpec(), RngStream(0), 400)

    def test_determinism_with_fixed_stream(self):
        clip = _sine(660, 1.0)
        s = RngStream(9).split("det")
        a = make_views(clip, "cl_adapt", AugmentSpec(), s, 400)
        b = make_views(clip, "cl_adapt", AugmentSpec(), s, 400)
        for va, vb in zip(a, b):
            np.testing.assert_array_equal(va.values, vb.values)

    def test_reduced_strength_parameters(self):
        spec = AugmentSpec()
        red = spec.reduced()
        assert red.max_freq_width == spec.max_freq_width // 2
        assert red.max_time_width == spec.max_time_width // 2
        assert red.rrc_scale[0] == 0.8
        assert red.strength == "reduced"


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_waveform_chain_shape_and_determinism(seed):
    clip = _sine(200 + (seed % 300), 0.6)
    spec = AugmentSpec()
    a = augment_waveform(clip, spec, np.random.default_rng(seed))
    b = augment_waveform(clip, spec, np.random.default_rng(seed))
    np.testing.assert_array_equal(a.samples, b.samples)
    assert np.all(np.abs(a.samples) <= 1.0)
