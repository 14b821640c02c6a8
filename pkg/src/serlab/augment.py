"""Waveform and spectrogram augmentations plus per-pipeline view construction.

Every transform is a pure function of its inputs and the supplied random
stream, so views are reproducible and parallelizable per utterance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from serlab import kernels
from serlab.dsp import AudioClip, MelSpectrogram, crop_or_pad, log_mel, mel_power, power_to_values
from serlab.rng import RngStream

PIPELINES = ("cl_adapt", "byol_ssl", "byol_supervised", "baseline")


class AugmentError(ValueError):
    pass


@dataclass
class AugmentSpec:
    """Transform toggles and parameter ranges; defaults follow the common
    SpecAugment/BYOL-for-audio settings for the values the method leaves open."""

    noise_snr_db: tuple[float, float] = (10.0, 20.0)
    gain_db: tuple[float, float] = (-6.0, 6.0)
    speed: tuple[float, float] = (0.9, 1.1)
    stretch: tuple[float, float] = (0.9, 1.1)
    n_freq_masks: int = 2
    max_freq_width: int = 15
    n_time_masks: int = 2
    max_time_width: int = 50
    mixup_max_ratio: float = 0.4
    rrc_scale: tuple[float, float] = (0.6, 1.0)
    polarity_prob: float = 0.5
    strength: str = "full"

    def validate(self) -> None:
        for name in ("noise_snr_db", "gain_db", "speed", "stretch", "rrc_scale"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise AugmentError(f"{name}: degenerate range ({lo}, {hi})")
        if not 0.0 <= self.mixup_max_ratio <= 1.0:
            raise AugmentError(f"mixup_max_ratio must lie in [0, 1], got {self.mixup_max_ratio}")
        if self.strength not in ("full", "reduced"):
            raise AugmentError(f"strength must be 'full' or 'reduced', got {self.strength!r}")

    def reduced(self) -> "AugmentSpec":
        """Half-width masks and a tighter crop floor for supervised views."""
        return replace(
            self,
            max_freq_width=max(1, self.max_freq_width // 2),
            max_time_width=max(1, self.max_time_width // 2),
            rrc_scale=(max(self.rrc_scale[0], 0.8), self.rrc_scale[1]),
            strength="reduced",
        )


# ---------------------------------------------------------------------------
# waveform transforms


def add_noise_snr(clip: AudioClip, snr_db: float, rng: np.random.Generator) -> AudioClip:
    """Add white Gaussian noise scaled to the requested signal-to-noise ratio."""
    x = clip.samples
    p_signal = float(np.mean(np.square(x), dtype=np.float64))
    if p_signal == 0.0:
        warnings.warn("add_noise_snr: all-zero clip, SNR undefined; returning input")
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    noise = rng.standard_normal(x.size, dtype=np.float32)
    target_p_noise = p_signal / (10.0 ** (snr_db / 10.0))
    noise *= np.float32(np.sqrt(target_p_noise / np.mean(np.square(noise), dtype=np.float64)))
    out = np.clip(x + noise, -1.0, 1.0)
    return AudioClip(out, clip.sample_rate)


def invert_polarity(clip: AudioClip) -> AudioClip:
    return AudioClip(-clip.samples, clip.sample_rate)


def apply_gain(clip: AudioClip, gain_db: float, stats: dict | None = None) -> AudioClip:
    """Scale by 10^(dB/20) and clip to [-1, 1]; the clipped fraction is
    written into `stats` when a dict is supplied."""
    scaled = clip.samples * np.float32(10.0 ** (gain_db / 20.0))
    if stats is not None:
        stats["clipped_fraction"] = float(np.mean(np.abs(scaled) > 1.0))
    return AudioClip(np.clip(scaled, -1.0, 1.0), clip.sample_rate)


def speed_perturb(clip: AudioClip, factor: float, quality: str = "linear") -> AudioClip:
    """Resampled playback at `factor` speed (pitch shifts with speed)."""
    if factor <= 0:
        raise AugmentError(f"speed factor must be positive, got {factor}")
    if factor == 1.0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n_out = int(round(clip.samples.size / factor))
    if quality == "linear":
        pos = np.arange(n_out, dtype=np.float32) * np.float32(factor)
        lo = np.minimum(pos.astype(np.int64), clip.samples.size - 2)
        frac = pos - lo
        x = clip.samples
        out = x[lo] * (1.0 - frac) + x[lo + 1] * frac
    elif quality == "sinc":
        out = kernels.sinc_resample(clip.samples.astype(np.float64), 1.0 / factor, n_out)
        out = np.clip(out, -1.0, 1.0)
    else:
        raise AugmentError(f"unknown speed quality {quality!r}")
    return AudioClip(out.astype(np.float32), clip.sample_rate)


# ---------------------------------------------------------------------------
# spectrogram transforms


def spectral_stretch(spec: MelSpectrogram, factor: float) -> MelSpectrogram:
    """Rescale the mel axis by `factor` (band at bin b moves to b*factor).

    Interpolation runs in the linear-power domain with a 1/factor change-of-
    variables correction, so total energy is approximately conserved.
    """
    if factor <= 0:
        raise AugmentError(f"stretch factor must be positive, got {factor}")
    n = spec.n_mels
    power = mel_power(spec)
    src = np.arange(n, dtype=np.float64) / factor
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    lo = np.clip(lo, 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    stretched = (power[lo] * (1.0 - frac[:, None]) + power[hi] * frac[:, None]) / factor
    return MelSpectrogram(power_to_values(stretched), spec.frame_hop, spec.source_rate)


def spec_augment(
    spec: MelSpectrogram,
    n_freq_masks: int,
    max_f: int,
    n_time_masks: int,
    max_t: int,
    rng: np.random.Generator,
) -> MelSpectrogram:
    """Mask random frequency bands and time spans to the per-spectrogram mean."""
    f_bins, t_bins = spec.values.shape
    if max_f > f_bins or max_t > t_bins:
        raise AugmentError(f"mask widths ({max_f}, {max_t}) exceed axes ({f_bins}, {t_bins})")
    values = spec.values.copy()
    fill = np.float32(spec.values.mean())
    for _ in range(n_freq_masks):
        w = int(rng.integers(0, max_f + 1))
        if w:
            start = int(rng.integers(0, f_bins - w + 1))
            values[start : start + w, :] = fill
    for _ in range(n_time_masks):
        w = int(rng.integers(0, max_t + 1))
        if w:
            start = int(rng.integers(0, t_bins - w + 1))
            values[:, start : start + w] = fill
    return MelSpectrogram(values, spec.frame_hop, spec.source_rate)


def mixup(spec_a: MelSpectrogram, spec_b: MelSpectrogram, ratio: float) -> MelSpectrogram:
    """Convex combination in the linear-power domain: (1-r)*a + r*b."""
    if spec_a.values.shape != spec_b.values.shape:
        raise AugmentError(
            f"mixup shape mismatch: {spec_a.values.shape} vs {spec_b.values.shape}"
        )
    if not 0.0 <= ratio <= 1.0:
        raise AugmentError(f"mixup ratio must lie in [0, 1], got {ratio}")
    mixed = (1.0 - ratio) * mel_power(spec_a) + ratio * mel_power(spec_b)
    return MelSpectrogram(power_to_values(mixed), spec_a.frame_hop, spec_a.source_rate)


def random_resize_crop(
    spec: MelSpectrogram, scale_ranges: tuple[tuple[float, float], tuple[float, float]],
    rng: np.random.Generator,
) -> MelSpectrogram:
    """Crop a random sub-rectangle (independent axis scales) and resize back."""
    (f_lo, f_hi), (t_lo, t_hi) = scale_ranges
    for lo, hi in ((f_lo, f_hi), (t_lo, t_hi)):
        if not 0.0 < lo <= hi <= 1.0:
            raise AugmentError(f"rrc scales must lie in (0, 1], got ({lo}, {hi})")
    f_bins, t_bins = spec.values.shape
    fs = rng.uniform(f_lo, f_hi)
    ts = rng.uniform(t_lo, t_hi)
    fh = max(1, int(round(f_bins * fs)))
    tw = max(1, int(round(t_bins * ts)))
    f0 = int(rng.integers(0, f_bins - fh + 1))
    t0 = int(rng.integers(0, t_bins - tw + 1))
    patch = spec.values[f0 : f0 + fh, t0 : t0 + tw]
    values = kernels.bilinear_resize(patch.astype(np.float64), f_bins, t_bins)
    return MelSpectrogram(values.astype(np.float32), spec.frame_hop, spec.source_rate)


# ---------------------------------------------------------------------------
# view construction


def augment_waveform(clip: AudioClip, spec: AugmentSpec, rng: np.random.Generator) -> AudioClip:
    """The waveform chain: noise -> polarity -> gain -> speed."""
    snr = rng.uniform(*spec.noise_snr_db)
    out = add_noise_snr(clip, snr, rng)
    if rng.random() < spec.polarity_prob:
        out = invert_polarity(out)
    out = apply_gain(out, rng.uniform(*spec.gain_db))
    out = speed_perturb(out, rng.uniform(*spec.speed))
    return out


def _augmented_features(
    clip: AudioClip,
    spec: AugmentSpec,
    rng: np.random.Generator,
    target_frames: int,
    train_mode: bool,
) -> MelSpectrogram:
    wav = augment_waveform(clip, spec, rng)
    feats = crop_or_pad(log_mel(wav), target_frames, train_mode=train_mode, rng=rng)
    feats = spectral_stretch(feats, rng.uniform(*spec.stretch))
    return spec_augment(
        feats, spec.n_freq_masks, spec.max_freq_width, spec.n_time_masks, spec.max_time_width, rng
    )


def _masked_view(
    base: MelSpectrogram,
    spec: AugmentSpec,
    rng: np.random.Generator,
    target_frames: int,
    train_mode: bool,
    mixup_pool: list[MelSpectrogram] | None,
) -> MelSpectrogram:
    view = crop_or_pad(base, target_frames, train_mode=train_mode, rng=rng)
    view = spec_augment(
        view, spec.n_freq_masks, spec.max_freq_width, spec.n_time_masks, spec.max_time_width, rng
    )
    if mixup_pool:
        partner = mixup_pool[int(rng.integers(0, len(mixup_pool)))]
        partner = crop_or_pad(partner, target_frames, train_mode=train_mode, rng=rng)
        view = mixup(view, partner, rng.uniform(0.0, spec.mixup_max_ratio))
    return random_resize_crop(view, (spec.rrc_scale, spec.rrc_scale), rng)


def make_views(
    item,
    pipeline: str,
    spec: AugmentSpec,
    stream: RngStream,
    target_frames: int,
    train_mode: bool = True,
    mixup_pool: list[MelSpectrogram] | None = None,
) -> list[MelSpectrogram]:
    """Build the views one sample contributes to a training step.

    cl_adapt        clean + augmented features of an AudioClip
    baseline        one augmented view of an AudioClip
    byol_ssl        two independently masked/mixed/cropped views of a mel matrix
    byol_supervised three reduced-strength masked/cropped views of a mel matrix
    """
    if pipeline not in PIPELINES:
        raise AugmentError(f"unknown pipeline {pipeline!r}; expected one of {PIPELINES}")
    if pipeline in ("cl_adapt", "baseline"):
        if not isinstance(item, AudioClip):
            raise AugmentError(f"{pipeline} views start from an AudioClip")
        views = []
        if pipeline == "cl_adapt":
            views.append(crop_or_pad(log_mel(item), target_frames, train_mode=False))
        views.append(
            _augmented_features(
                item, spec, stream.split("aug", 0).generator(), target_frames, train_mode
            )
        )
        return views
    if not isinstance(item, MelSpectrogram):
        raise AugmentError(f"{pipeline} views start from a MelSpectrogram")
    if pipeline == "byol_ssl":
        return [
            _masked_view(
                item, spec, stream.split("view", i).generator(), target_frames, train_mode, mixup_pool
            )
            for i in range(2)
        ]
    reduced = spec.reduced()
    return [
        _masked_view(
            item, reduced, stream.split("view", i).generator(), target_frames, train_mode, None
        )
        for i in range(3)
    ]
