"""Audio loading, resampling, and log-mel extraction.

The mel front-end uses the reference 16 kHz parameter set (n_fft 400, hop
160, 80 slaney-normalized triangular filters spanning 0-8 kHz) with
log10-power dynamic-range normalization: clamp to (max - 8), then
(x + 4) / 4.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.io import wavfile

from serlab import kernels

N_FFT = 400
HOP = 160
N_MELS = 80
SAMPLE_RATE = 16_000
POWER_FLOOR = 1e-10

SPEC_MAGIC = b"SMEL"


class AudioError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray  # mono float in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("AudioClip needs a non-empty mono sample array")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames)
    frame_hop: int
    source_rate: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise AudioError(f"mel matrix must be 2-D, got shape {self.values.shape}")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def floor(self) -> float:
        """Padding value: the lowest level present in this spectrogram."""
        return float(self.values.min())


def load_audio(path) -> AudioClip:
    """Read a WAV file; average channels to mono, scale PCM to [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if data.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float32) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = np.clip(data, -1.0, 1.0)
    else:
        raise AudioError(f"{path}: unsupported sample encoding {data.dtype}")
    return AudioClip(samples.astype(np.float32), int(rate))


def save_audio(path, clip: AudioClip, encoding: str = "int16") -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if encoding == "int16":
        pcm = np.clip(np.rint(clip.samples.astype(np.float64) * 32767.0), -32768, 32767)
        wavfile.write(str(path), clip.sample_rate, pcm.astype(np.int16))
    elif encoding == "float32":
        wavfile.write(str(path), clip.sample_rate, clip.samples.astype(np.float32))
    else:
        raise AudioError(f"unsupported encoding {encoding!r}")


def resample(clip: AudioClip, target_rate: int, quality: str = "sinc") -> AudioClip:
    """Rate conversion; windowed-sinc by default, linear behind quality='linear'."""
    if target_rate <= 0:
        raise AudioError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    ratio = target_rate / clip.sample_rate
    n_out = int(round(clip.samples.size * ratio))
    if quality == "sinc":
        out = kernels.sinc_resample(clip.samples.astype(np.float64), ratio, n_out)
    elif quality == "linear":
        pos = np.arange(n_out) / ratio
        out = np.interp(pos, np.arange(clip.samples.size), clip.samples)
    else:
        raise AudioError(f"unknown resample quality {quality!r}")
    return AudioClip(np.clip(out, -1.0, 1.0).astype(np.float32), target_rate)


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    mel = f * 3.0 / 200.0
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + np.log(np.maximum(f, 1e-9) / 1000.0) * 27.0 / np.log(6.4), mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * 200.0 / 3.0
    log_region = m >= 15.0
    return np.where(log_region, 1000.0 * np.exp(np.log(6.4) * (m - 15.0) / 27.0), f)


def mel_center_frequencies(n_mels: int = N_MELS, f_min: float = 0.0, f_max: float = 8000.0) -> np.ndarray:
    pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return pts[1:-1]


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float = 8000.0,
) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters with slaney area normalization."""
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, center, hi = pts[:-2], pts[1:-1], pts[2:]
    up = (freqs[None, :] - lo[:, None]) / np.maximum(center - lo, 1e-9)[:, None]
    down = (hi[:, None] - freqs[None, :]) / np.maximum(hi - center, 1e-9)[:, None]
    weights = np.maximum(0.0, np.minimum(up, down))
    weights *= (2.0 / (hi - lo))[:, None]
    return weights


_HANN_CACHE: dict[int, np.ndarray] = {}
_MEL_CACHE: dict[tuple, np.ndarray] = {}


def _hann(n_fft: int) -> np.ndarray:
    w = _HANN_CACHE.get(n_fft)
    if w is None:
        w = (0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft))).astype(np.float32)
        _HANN_CACHE[n_fft] = w
    return w


def _mel_weights(n_mels, n_fft, rate) -> np.ndarray:
    key = (n_mels, n_fft, rate)
    w = _MEL_CACHE.get(key)
    if w is None:
        w = mel_filterbank(n_mels, n_fft, rate).astype(np.float32)
        _MEL_CACHE[key] = w
    return w


def stft_power(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centered magnitude-squared STFT, (n_fft//2+1, n_frames) with
    n_frames = len // hop (the reference front-end drops the final frame)."""
    x = np.asarray(samples, dtype=np.float32)
    if x.size < n_fft:
        raise AudioError(f"clip of {x.size} samples is shorter than one window ({n_fft})")
    half = n_fft // 2
    padded = np.pad(x, (half, half), mode="reflect")
    n_frames = x.size // hop
    s = padded.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        padded, shape=(n_frames, n_fft), strides=(s * hop, s), writeable=False
    )
    spec = scipy.fft.rfft(frames * _hann(n_fft), axis=1)
    mag = np.square(spec.real) + np.square(spec.imag)
    return np.ascontiguousarray(mag.T)


def log_mel(
    clip: AudioClip,
    n_fft: int = N_FFT,
    hop: int = HOP,
    n_mels: int = N_MELS,
) -> MelSpectrogram:
    """Log-mel features with the reference normalization; clip must be 16 kHz."""
    if clip.sample_rate != SAMPLE_RATE:
        raise AudioError(f"log_mel expects {SAMPLE_RATE} Hz input, got {clip.sample_rate}")
    power = stft_power(clip.samples, n_fft, hop)
    mel = _mel_weights(n_mels, n_fft, clip.sample_rate) @ power
    log_spec = np.log10(np.maximum(mel, POWER_FLOOR))
    log_spec = np.maximum(log_spec, log_spec.max() - 8.0)
    values = (log_spec + 4.0) / 4.0
    return MelSpectrogram(values.astype(np.float32), frame_hop=hop, source_rate=clip.sample_rate)


def mel_power(spec: MelSpectrogram) -> np.ndarray:
    """Invert the normalization back to linear mel power."""
    return np.power(10.0, 4.0 * spec.values.astype(np.float64) - 4.0)


def power_to_values(power: np.ndarray) -> np.ndarray:
    """Forward normalization for linear mel power (no re-clamping)."""
    return ((np.log10(np.maximum(power, POWER_FLOOR)) + 4.0) / 4.0).astype(np.float32)


def crop_or_pad(
    spec: MelSpectrogram,
    target_frames: int,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> MelSpectrogram:
    """Crop (random start in train mode, centered otherwise) or right-pad with
    the spectrogram's floor value so the output has exactly target_frames."""
    if target_frames <= 0:
        raise AudioError(f"target_frames must be positive, got {target_frames}")
    t = spec.n_frames
    if t == target_frames:
        return MelSpectrogram(spec.values.copy(), spec.frame_hop, spec.source_rate)
    if t > target_frames:
        if train_mode:
            if rng is None:
                raise ValueError("train-mode crop needs an rng")
            start = int(rng.integers(0, t - target_frames + 1))
        else:
            start = (t - target_frames) // 2
        values = spec.values[:, start : start + target_frames].copy()
    else:
        values = np.full((spec.n_mels, target_frames), spec.floor, dtype=np.float32)
        values[:, :t] = spec.values
    return MelSpectrogram(values, spec.frame_hop, spec.source_rate)


def write_spec_matrix(path, values: np.ndarray) -> None:
    """Binary matrix export: magic, u32 rows, u32 cols, f32 little-endian data."""
    values = np.asarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(SPEC_MAGIC)
        fh.write(struct.pack("<II", values.shape[0], values.shape[1]))
        fh.write(values.tobytes())


def read_spec_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SPEC_MAGIC:
            raise AudioError(f"{path}: bad magic {magic!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    return data.reshape(rows, cols).copy()
