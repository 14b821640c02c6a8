"""Deterministic synthetic cross-lingual emotional-speech corpus.

Each clip is a harmonic tone complex. Emotion classes occupy distinct ranges
of pitch mean, pitch wander depth, loudness, and amplitude-modulation rate;
speakers add a fixed pitch offset and harmonic timbre profile; language
domains add a base-pitch offset and a spectral-tilt slope. Everything is a
pure function of (config, speaker index, utterance index), so output is
byte-identical across runs and schedules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from serlab.dsp import AudioClip, save_audio
from serlab.manifest import UtteranceRecord, write_manifest
from serlab.rng import RngStream

MAX_HARMONICS = 48
HARMONIC_CEILING_HZ = 7600.0


class SynthError(ValueError):
    pass


@dataclass
class LanguageDomain:
    tag: str
    pitch_offset_hz: float
    tilt_db_per_octave: float


@dataclass
class ProsodyRange:
    """Per-emotion parameter ranges; each entry is a closed (lo, hi) interval."""

    pitch_mean_hz: tuple[float, float]
    pitch_var_hz: tuple[float, float]
    rms: tuple[float, float]
    mod_rate_hz: tuple[float, float]

    def as_tuple(self):
        return (self.pitch_mean_hz, self.pitch_var_hz, self.rms, self.mod_rate_hz)


DEFAULT_CLASS_PROSODY = {
    "angry": ProsodyRange((228.0, 262.0), (18.0, 26.0), (0.20, 0.26), (6.2, 7.8)),
    "happy": ProsodyRange((186.0, 214.0), (11.0, 16.0), (0.13, 0.17), (4.3, 5.3)),
    "neutral": ProsodyRange((136.0, 158.0), (1.0, 3.0), (0.08, 0.11), (2.6, 3.4)),
    "sad": ProsodyRange((102.0, 122.0), (4.0, 7.0), (0.045, 0.065), (1.3, 1.9)),
}

DEFAULT_LANGUAGES = (
    LanguageDomain("hrl-synth", 0.0, -2.0),
    LanguageDomain("lrl-synth", 55.0, -7.0),
)


@dataclass
class SynthCorpusConfig:
    n_speakers: int = 40
    utterances_per_speaker: int = 25
    languages: tuple[LanguageDomain, ...] = DEFAULT_LANGUAGES
    class_prosody: dict[str, ProsodyRange] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_PROSODY)
    )
    seed: int = 0
    sample_rate: int = 16_000
    duration_range: tuple[float, float] = (2.4, 3.6)
    n_sessions: int = 5
    majority_gender_fraction: float = 0.86
    speaker_offset_hz: float = 30.0
    mod_depth: float = 0.32
    noise_floor_rms: float = 5e-4

    def validate(self) -> None:
        if self.n_speakers < 2 or self.utterances_per_speaker < 1:
            raise SynthError("need at least 2 speakers and 1 utterance each")
        if len(self.languages) < 1:
            raise SynthError("need at least one language domain")
        for name, pr in self.class_prosody.items():
            for lo, hi in pr.as_tuple():
                if not lo <= hi:
                    raise SynthError(f"class {name!r}: degenerate range ({lo}, {hi})")
        classes = sorted(self.class_prosody)
        for i, a in enumerate(classes):
            for b in classes[i + 1 :]:
                if self.class_prosody[a].as_tuple() == self.class_prosody[b].as_tuple():
                    raise SynthError(f"classes {a!r} and {b!r} have identical prosody ranges")
        if not 0.0 < self.duration_range[0] <= self.duration_range[1]:
            raise SynthError(f"bad duration range {self.duration_range}")
        if not 0.5 <= self.majority_gender_fraction < 1.0:
            raise SynthError("majority_gender_fraction must lie in [0.5, 1)")


@dataclass
class SpeakerProfile:
    """Fixed per-speaker traits.

    Besides pitch offset and harmonic timbre, every speaker carries prosody
    habits (loudness, modulation-rate, and pitch-variability multipliers), so
    telling speakers apart requires representing the same acoustic axes the
    emotion classes live on. Speaker-discriminative training then organizes
    exactly the features that matter downstream.
    """

    index: int
    gender: str
    pitch_offset_hz: float
    timbre: np.ndarray  # (MAX_HARMONICS,) amplitude envelope
    phase_jitter: np.ndarray  # (MAX_HARMONICS,)
    session: str
    rms_mult: float = 1.0
    mod_mult: float = 1.0
    pitch_var_mult: float = 1.0


def _schroeder_phases(n: int) -> np.ndarray:
    h = np.arange(1, n + 1)
    return -np.pi * h * (h - 1) / n


def speaker_profiles(config: SynthCorpusConfig, domain_idx: int) -> list[SpeakerProfile]:
    """Deterministic per-speaker attributes for one language domain.

    Majority gender is male (negative pitch offsets); offsets are spaced
    uniformly inside +/- speaker_offset_hz, separated from zero so gender is
    recoverable from the offset sign.
    """
    n = config.n_speakers
    n_male = int(round(config.majority_gender_fraction * n))
    n_female = n - n_male
    lo = config.speaker_offset_hz

    def spaced(count, a, b):
        if count == 1:
            return np.array([(a + b) / 2.0])
        return np.linspace(a, b, count)

    male_offsets = spaced(n_male, -lo, -lo * 0.1)
    female_offsets = spaced(n_female, lo * 0.1, lo) if n_female else np.empty(0)
    profiles = []
    for idx in range(n):
        if idx < n_male:
            gender, offset = "male", float(male_offsets[idx])
        else:
            gender, offset = "female", float(female_offsets[idx - n_male])
        rng = RngStream(config.seed).split("speaker", domain_idx, idx).generator()
        u = np.linspace(0.0, 1.0, MAX_HARMONICS)
        curve = np.zeros(MAX_HARMONICS)
        for j in range(1, 5):
            curve += rng.normal(0.0, 0.30 / j) * np.cos(np.pi * j * u)
        timbre = np.exp(curve)
        jitter = rng.uniform(-0.6, 0.6, MAX_HARMONICS)
        profiles.append(
            SpeakerProfile(
                index=idx,
                gender=gender,
                pitch_offset_hz=offset,
                timbre=timbre,
                phase_jitter=jitter,
                session=f"s{idx % config.n_sessions}",
                rms_mult=float(np.exp(rng.uniform(-0.22, 0.22))),
                mod_mult=float(np.exp(rng.uniform(-0.16, 0.16))),
                pitch_var_mult=float(np.exp(rng.uniform(-0.25, 0.25))),
            )
        )
    return profiles


def _draw(rng, bounds) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def synth_utterance(
    config: SynthCorpusConfig,
    domain: LanguageDomain,
    profile: SpeakerProfile,
    emotion: str,
    stream: RngStream,
) -> AudioClip:
    """Render one clip; fully determined by the stream address."""
    rng = stream.generator()
    prosody = config.class_prosody[emotion]
    sr = config.sample_rate
    duration = _draw(rng, config.duration_range)
    pitch_mean = _draw(rng, prosody.pitch_mean_hz) + profile.pitch_offset_hz + domain.pitch_offset_hz

    def _habit(bounds, mult):
        # speaker habits bias the draw but never leave the class range
        lo, hi = bounds
        return float(np.clip(_draw(rng, bounds) * mult, lo, hi))

    pitch_var = _habit(prosody.pitch_var_hz, profile.pitch_var_mult)
    target_rms = _habit(prosody.rms, profile.rms_mult)
    mod_rate = _habit(prosody.mod_rate_hz, profile.mod_mult)
    wander_rate = float(rng.uniform(0.6, 1.4))
    wander_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    am_phase = float(rng.uniform(0.0, 2.0 * np.pi))

    n = int(round(duration * sr))
    t = np.arange(n) / sr
    f0 = pitch_mean + pitch_var * np.sin(2.0 * np.pi * wander_rate * t + wander_phase)
    phase = 2.0 * np.pi * np.cumsum(f0) / sr

    n_harm = max(3, min(MAX_HARMONICS, int(HARMONIC_CEILING_HZ / f0.max())))
    h = np.arange(1, n_harm + 1, dtype=np.float64)
    tilt = np.power(10.0, domain.tilt_db_per_octave * np.log2(h) / 20.0)
    amps = profile.timbre[:n_harm] * tilt
    phases = _schroeder_phases(n_harm) + profile.phase_jitter[:n_harm]
    sig = np.sin(np.outer(phase, h) + phases) @ amps

    envelope = 1.0 + config.mod_depth * np.sin(2.0 * np.pi * mod_rate * t + am_phase)
    sig *= envelope

    fade = int(0.010 * sr)
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(fade) / fade))
    sig[:fade] *= ramp
    sig[-fade:] *= ramp[::-1]

    sig /= np.sqrt(np.mean(np.square(sig)))
    sig += config.noise_floor_rms / target_rms * rng.standard_normal(n)

    # crest limiting: shave the rare extreme peaks so any configured rms fits
    # in [-1, 1]; renormalizing after each clip pass keeps rms exact
    crest_budget = 0.97 / target_rms
    if crest_budget < 1.2:
        raise SynthError(
            f"rms target {target_rms:.3f} for {emotion!r} leaves no crest headroom; "
            "lower the class rms range"
        )
    sig /= np.sqrt(np.mean(np.square(sig)))
    for _ in range(16):
        if np.max(np.abs(sig)) <= crest_budget:
            break
        np.clip(sig, -0.985 * crest_budget, 0.985 * crest_budget, out=sig)
        sig /= np.sqrt(np.mean(np.square(sig)))
    sig *= target_rms

    peak = float(np.max(np.abs(sig)))
    if peak > 0.998:
        raise SynthError(f"clip for {emotion!r} still exceeds full scale (peak {peak:.3f})")
    return AudioClip(sig.astype(np.float32), sr)


def generate_synth_corpus(config: SynthCorpusConfig, out_dir) -> Path:
    """Emit WAV files plus manifest.jsonl under out_dir; returns the manifest path."""
    config.validate()
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    classes = sorted(config.class_prosody)
    records = []
    for d_idx, domain in enumerate(config.languages):
        for profile in speaker_profiles(config, d_idx):
            for k in range(config.utterances_per_speaker):
                emotion = classes[k % len(classes)]
                stream = RngStream(config.seed).split("utt", d_idx, profile.index, k)
                clip = synth_utterance(config, domain, profile, emotion, stream)
                uid = f"{domain.tag}_spk{profile.index:02d}_u{k:02d}"
                rel = f"audio/{uid}.wav"
                save_audio(out_dir / rel, clip)
                records.append(
                    UtteranceRecord(
                        id=uid,
                        audio_path=rel,
                        speaker_id=f"{domain.tag}_spk{profile.index:02d}",
                        duration_s=clip.duration_s,
                        emotion=emotion,
                        gender=profile.gender,
                        session=profile.session,
                        language=domain.tag,
                    )
                )
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return manifest_path
