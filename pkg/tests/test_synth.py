"""Synthetic corpus: determinism, prosody contracts, domain offsets, gender
assignment, and session structure."""

import numpy as np
import pytest

from serlab.dsp import load_audio
from serlab.manifest import EMOTIONS, read_manifest
from serlab.rng import RngStream
from serlab.synth import (
    DEFAULT_CLASS_PROSODY,
    LanguageDomain,
    ProsodyRange,
    SpeakerProfile,
    SynthCorpusConfig,
    SynthError,
    generate_synth_corpus,
    speaker_profiles,
    synth_utterance,
)


def small_config(**kw):
    base = dict(
        n_speakers=6,
        utterances_per_speaker=4,
        n_sessions=2,
        duration_range=(1.0, 1.4),
        seed=123,
    )
    base.update(kw)
    return SynthCorpusConfig(**base)


def estimate_f0(samples: np.ndarray, rate: int, lo=60.0, hi=400.0) -> float:
    """Autocorrelation pitch estimate with parabolic peak interpolation."""
    x = samples.astype(np.float64)
    x = x - x.mean()
    n = x.size
    spec = np.fft.rfft(x, 2 * n)
    ac = np.fft.irfft(spec * np.conj(spec))[:n]
    lag_lo = int(rate / hi)
    lag_hi = min(int(rate / lo), n - 2)
    window = ac[lag_lo:lag_hi]
    k = int(np.argmax(window)) + lag_lo
    if 1 <= k < n - 1:
        denom = ac[k - 1] - 2 * ac[k] + ac[k + 1]
        if denom != 0:
            k = k + 0.5 * (ac[k - 1] - ac[k + 1]) / denom
    return rate / k


class TestDeterminism:
    def test_byte_identical_output(self, tmp_path):
        cfg = small_config()
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_synth_corpus(cfg, a_dir)
        generate_synth_corpus(cfg, b_dir)
        a_files = sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(b_dir) for p in b_dir.rglob("*") if p.is_file())
        assert a_files == b_files
        for rel in a_files:
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes(), rel

    def test_seed_changes_output(self, tmp_path):
        a = generate_synth_corpus(small_config(seed=1), tmp_path / "a")
        b = generate_synth_corpus(small_config(seed=2), tmp_path / "b")
        ra, rb = read_manifest(a), read_manifest(b)
        assert any(x.duration_s != y.duration_s for x, y in zip(ra, rb))


class TestProsodyContracts:
    def test_rms_within_configured_range(self):
        prosody = dict(DEFAULT_CLASS_PROSODY)
        prosody["angry"] = ProsodyRange((228.0, 262.0), (18.0, 26.0), (0.25, 0.35), (6.2, 7.8))
        cfg = small_config(class_prosody=prosody)
        for d_idx, domain in enumerate(cfg.languages):
            for profile in speaker_profiles(cfg, d_idx)[:4]:
                for k in (0, 1):
                    clip = synth_utterance(
                        cfg, domain, profile, "angry",
                        RngStream(cfg.seed).split("utt", d_idx, profile.index, k),
                    )
                    rms = float(np.sqrt(np.mean(clip.samples.astype(np.float64) ** 2)))
                    assert 0.25 <= rms <= 0.35
                    assert np.abs(clip.samples).max() <= 1.0

    def test_durations_within_range(self, tmp_path):
        cfg = small_config()
        records = read_manifest(generate_synth_corpus(cfg, tmp_path))
        for r in records:
            assert cfg.duration_range[0] <= r.duration_s <= cfg.duration_range[1] + 1e-3

    def test_emotions_cycle_evenly(self, tmp_path):
        cfg = small_config(utterances_per_speaker=8)
        records = read_manifest(generate_synth_corpus(cfg, tmp_path))
        per_speaker = {}
        for r in records:
            per_speaker.setdefault(r.speaker_id, []).append(r.emotion)
        for emotions in per_speaker.values():
            counts = {e: emotions.count(e) for e in EMOTIONS}
            assert set(counts.values()) == {2}

    def test_rms_target_too_high_rejected(self):
        prosody = dict(DEFAULT_CLASS_PROSODY)
        prosody["angry"] = ProsodyRange((228.0, 262.0), (18.0, 26.0), (0.9, 0.95), (6.2, 7.8))
        cfg = small_config(class_prosody=prosody)
        domain = cfg.languages[0]
        profile = speaker_profiles(cfg, 0)[0]
        with pytest.raises(SynthError, match="crest|rms"):
            synth_utterance(cfg, domain, profile, "angry", RngStream(0).split("utt", 0, 0, 0))


class TestDomainOffsets:
    def test_pitch_offset_between_domains(self):
        cfg = small_config(
            n_speakers=8,
            languages=(
                LanguageDomain("a", 0.0, -2.0),
                LanguageDomain("b", 40.0, -2.0),
            ),
            duration_range=(1.5, 1.8),
        )
        means = {}
        for d_idx, domain in enumerate(cfg.languages):
            f0s = []
            for profile in speaker_profiles(cfg, d_idx):
                for k in range(3):
                    clip = synth_utterance(
                        cfg, domain, profile, "neutral",
                        RngStream(cfg.seed).split("utt", d_idx, profile.index, k),
                    )
                    f0s.append(estimate_f0(clip.samples, cfg.sample_rate))
            means[domain.tag] = float(np.mean(f0s))
        assert abs((means["b"] - means["a"]) - 40.0) <= 5.0

    def test_tilt_darkens_spectrum(self):
        cfg = small_config(
            languages=(
                LanguageDomain("bright", 0.0, -1.0),
                LanguageDomain("dark", 0.0, -9.0),
            )
        )
        ratios = []
        for d_idx, domain in enumerate(cfg.languages):
            profile = speaker_profiles(cfg, d_idx)[0]
            clip = synth_utterance(
                cfg, domain, profile, "neutral", RngStream(0).split("utt", d_idx, 0, 0)
            )
            spec = np.abs(np.fft.rfft(clip.samples.astype(np.float64))) ** 2
            freqs = np.fft.rfftfreq(clip.samples.size, 1 / cfg.sample_rate)
            low = spec[(freqs > 50) & (freqs < 800)].sum()
            high = spec[(freqs > 800) & (freqs < 6000)].sum()
            ratios.append(high / low)
        assert ratios[1] < ratios[0] * 0.5


class TestSpeakerStructure:
    def test_gender_counts_follow_majority_fraction(self, tmp_path):
        cfg = small_config(n_speakers=20, majority_gender_fraction=0.85)
        records = read_manifest(generate_synth_corpus(cfg, tmp_path))
        speakers = {}
        for r in records:
            speakers[r.speaker_id] = r.gender
        per_domain = {}
        for spk, gender in speakers.items():
            per_domain.setdefault(spk.split("_spk")[0], []).append(gender)
        for genders in per_domain.values():
            assert genders.count("male") == 17
            assert genders.count("female") == 3

    def test_speaker_offsets_spaced_in_band(self):
        cfg = small_config(n_speakers=10, speaker_offset_hz=30.0)
        profiles = speaker_profiles(cfg, 0)
        offsets = [p.pitch_offset_hz for p in profiles]
        assert all(-30.0 <= o <= 30.0 for o in offsets)
        assert all(o < 0 for o, p in zip(offsets, profiles) if p.gender == "male")
        assert all(o > 0 for o, p in zip(offsets, profiles) if p.gender == "female")
        assert len(set(np.round(offsets, 6))) == len(offsets)

    def test_sessions_partition_speakers(self, tmp_path):
        cfg = small_config(n_speakers=6, n_sessions=3)
        records = read_manifest(generate_synth_corpus(cfg, tmp_path))
        by_speaker = {}
        for r in records:
            by_speaker.setdefault(r.speaker_id, set()).add(r.session)
        for sessions in by_speaker.values():
            assert len(sessions) == 1
        assert {r.session for r in records} == {"s0", "s1", "s2"}

    def test_prosody_habits_within_bounds(self):
        for profile in speaker_profiles(small_config(n_speakers=12), 0):
            assert 0.7 < profile.rms_mult < 1.45
            assert 0.8 < profile.mod_mult < 1.25
            assert 0.7 < profile.pitch_var_mult < 1.35


class TestConfigValidation:
    def test_identical_class_prosody_rejected(self):
        prosody = dict(DEFAULT_CLASS_PROSODY)
        prosody["happy"] = prosody["angry"]
        with pytest.raises(SynthError, match="identical"):
            small_config(class_prosody=prosody).validate()

    def test_degenerate_range_rejected(self):
        prosody = dict(DEFAULT_CLASS_PROSODY)
        prosody["sad"] = ProsodyRange((120.0, 100.0), (4.0, 7.0), (0.04, 0.06), (1.3, 1.9))
        with pytest.raises(SynthError, match="degenerate"):
            small_config(class_prosody=prosody).validate()

    def test_manifest_fields_complete(self, tmp_path):
        records = read_manifest(generate_synth_corpus(small_config(), tmp_path))
        assert len(records) == 2 * 6 * 4
        for r in records:
            assert r.emotion in EMOTIONS
            assert r.gender in ("female", "male")
            assert r.speaker_id and r.session and r.language
            assert (tmp_path / r.audio_path).exists()

    def test_audio_loadable_and_normalized(self, tmp_path):
        records = read_manifest(generate_synth_corpus(small_config(), tmp_path))
        clip = load_audio(tmp_path / records[0].audio_path)
        assert clip.sample_rate == 16000
        assert np.abs(clip.samples).max() <= 1.0
        assert abs(clip.duration_s - records[0].duration_s) < 0.01
