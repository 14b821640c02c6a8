"""Batch assembly for the trainers: audio/mel caching plus per-recipe view
construction. Wraps the augment module so every trainer sees ready
(features, labels) arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from serlab.augment import AugmentSpec, make_views
from serlab.dsp import AudioClip, MelSpectrogram, crop_or_pad, load_audio, log_mel
from serlab.manifest import EMOTIONS, UtteranceRecord
from serlab.rng import RngStream


def label_index(record: UtteranceRecord) -> int:
    return EMOTIONS.index(record.emotion)


class FeaturePipeline:
    """Feature and view provider over a manifest rooted at `audio_root`.

    Waveforms and full-length base mels are cached; augmented views are
    recomputed per draw from named random streams, so identical
    (seed, epoch, batch, slot) addresses give identical views.
    """

    def __init__(
        self,
        audio_root,
        augment_spec: AugmentSpec,
        stream: RngStream,
        cl_frames: int = 400,
        byol_frames: int = 300,
    ):
        self.audio_root = Path(audio_root)
        self.augment_spec = augment_spec
        self.stream = stream
        self.cl_frames = cl_frames
        self.byol_frames = byol_frames
        self._wav: dict[str, AudioClip] = {}
        self._mel: dict[str, MelSpectrogram] = {}
        self._clean: dict[tuple[str, int], np.ndarray] = {}

    def clip(self, record: UtteranceRecord) -> AudioClip:
        clip = self._wav.get(record.id)
        if clip is None:
            clip = load_audio(self.audio_root / record.audio_path)
            self._wav[record.id] = clip
        return clip

    def base_mel(self, record: UtteranceRecord) -> MelSpectrogram:
        mel = self._mel.get(record.id)
        if mel is None:
            mel = log_mel(self.clip(record))
            self._mel[record.id] = mel
        return mel

    def clean_features(self, record: UtteranceRecord, frames: int) -> np.ndarray:
        key = (record.id, frames)
        feats = self._clean.get(key)
        if feats is None:
            feats = crop_or_pad(self.base_mel(record), frames, train_mode=False).values
            self._clean[key] = feats
        return feats

    def eval_batch(self, records: list[UtteranceRecord], frames: int) -> np.ndarray:
        return np.stack([self.clean_features(r, frames) for r in records])

    # -- training views ----------------------------------------------------

    def baseline_batch(self, records, epoch: int, index: int):
        """One augmented view per record; (B, 80, cl_frames) plus labels."""
        views = []
        for slot, rec in enumerate(records):
            stream = self.stream.split("baseline", epoch, index, slot, rec.id)
            (view,) = make_views(
                self.clip(rec), "baseline", self.augment_spec, stream, self.cl_frames
            )
            views.append(view.values)
        labels = np.array([label_index(r) for r in records])
        return np.stack(views), labels

    def cl_batch(self, records, epoch: int, index: int, positives: str = "speaker"):
        """Clean+augmented views of each record; (2B, 80, cl_frames) plus
        pairing labels (speaker ids, or utterance ids when positives are
        restricted to same-utterance view pairs)."""
        views, labels = [], []
        for slot, rec in enumerate(records):
            stream = self.stream.split("cl", epoch, index, slot, rec.id)
            pair = make_views(self.clip(rec), "cl_adapt", self.augment_spec, stream, self.cl_frames)
            key = rec.speaker_id if positives == "speaker" else rec.id
            for v in pair:
                views.append(v.values)
                labels.append(key)
        return np.stack(views), np.array(labels)

    def byol_ssl_batch(self, records, epoch: int, index: int):
        """Two independently augmented mel views per record, (B, 80, byol_frames) each."""
        pool = [self.base_mel(r) for r in records]
        ones, twos = [], []
        for slot, rec in enumerate(records):
            stream = self.stream.split("ssl", epoch, index, slot, rec.id)
            v1, v2 = make_views(
                self.base_mel(rec),
                "byol_ssl",
                self.augment_spec,
                stream,
                self.byol_frames,
                mixup_pool=pool,
            )
            ones.append(v1.values)
            twos.append(v2.values)
        return np.stack(ones), np.stack(twos)

    def byol_supervised_batch(self, records, epoch: int, index: int):
        """Three reduced-strength views per record; (3B, 80, byol_frames) plus labels."""
        views, labels = [], []
        for slot, rec in enumerate(records):
            stream = self.stream.split("sup", epoch, index, slot, rec.id)
            triple = make_views(
                self.base_mel(rec), "byol_supervised", self.augment_spec, stream, self.byol_frames
            )
            y = label_index(rec)
            for v in triple:
                views.append(v.values)
                labels.append(y)
        return np.stack(views), np.array(labels)
