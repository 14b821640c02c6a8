"""Batch construction: speaker-structured contrastive batches, class-balanced
supervised batches, and mixed-source draws for the single-stage recipe.

Batch contents depend only on (seed, epoch, batch index), so epochs can be
prefetched or replayed without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from serlab.manifest import EMOTIONS, UtteranceRecord
from serlab.rng import RngStream

BATCHES_PER_EPOCH = 100


class SamplingError(ValueError):
    pass


@dataclass
class SpeakerBatchSpec:
    n_speakers: int = 16
    utterances_per_speaker: int = 4

    @property
    def batch_size(self) -> int:
        return self.n_speakers * self.utterances_per_speaker


@dataclass
class BalancedBatchSpec:
    batch_size: int = 64
    n_classes: int = len(EMOTIONS)

    def __post_init__(self):
        if self.batch_size % self.n_classes:
            raise SamplingError(
                f"batch_size {self.batch_size} not divisible by {self.n_classes} classes"
            )

    @property
    def per_class(self) -> int:
        return self.batch_size // self.n_classes


class SpeakerBatchSampler:
    """Batches of n_speakers distinct speakers x fixed utterances each,
    drawn without replacement inside a batch."""

    def __init__(self, records: list[UtteranceRecord], spec: SpeakerBatchSpec, stream: RngStream):
        self.spec = spec
        self.stream = stream
        by_speaker: dict[str, list[UtteranceRecord]] = {}
        for r in records:
            by_speaker.setdefault(r.speaker_id, []).append(r)
        self.speakers = sorted(
            s for s, rs in by_speaker.items() if len(rs) >= spec.utterances_per_speaker
        )
        self.by_speaker = {s: sorted(by_speaker[s], key=lambda r: r.id) for s in self.speakers}
        if len(self.speakers) < spec.n_speakers:
            raise SamplingError(
                f"{len(self.speakers)} eligible speakers (need >= {spec.n_speakers}; "
                f"eligibility requires >= {spec.utterances_per_speaker} utterances)"
            )

    def batch(self, epoch: int, index: int) -> list[UtteranceRecord]:
        rng = self.stream.split("speaker_batch", epoch, index).generator()
        chosen = rng.choice(len(self.speakers), size=self.spec.n_speakers, replace=False)
        batch = []
        for si in chosen:
            utts = self.by_speaker[self.speakers[si]]
            picks = rng.choice(len(utts), size=self.spec.utterances_per_speaker, replace=False)
            batch.extend(utts[p] for p in picks)
        return batch

    def epoch(self, epoch: int, n_batches: int = BATCHES_PER_EPOCH):
        for i in range(n_batches):
            yield self.batch(epoch, i)


class BalancedBatchSampler:
    """Batches with exactly per_class records of every emotion.

    Within an epoch each class cycles through its own shuffled order, so
    per-record usage counts never differ by more than one; minority classes
    recur across batches.
    """

    def __init__(self, records: list[UtteranceRecord], spec: BalancedBatchSpec, stream: RngStream):
        self.spec = spec
        self.stream = stream
        self.by_class: dict[str, list[UtteranceRecord]] = {e: [] for e in EMOTIONS}
        for r in records:
            if r.emotion is None:
                raise SamplingError(f"record {r.id!r} has no emotion label")
            self.by_class[r.emotion].append(r)
        empty = [e for e, rs in self.by_class.items() if not rs]
        if empty:
            raise SamplingError(f"classes with zero records: {empty}")
        for e in EMOTIONS:
            self.by_class[e].sort(key=lambda r: r.id)

    def _epoch_order(self, emotion: str, epoch: int, needed: int) -> list[int]:
        pool = len(self.by_class[emotion])
        rng = self.stream.split("balanced", emotion, epoch).generator()
        order: list[int] = []
        while len(order) < needed:
            order.extend(rng.permutation(pool).tolist())
        return order[:needed]

    def epoch(self, epoch: int, n_batches: int = BATCHES_PER_EPOCH):
        per = self.spec.per_class
        orders = {e: self._epoch_order(e, epoch, per * n_batches) for e in EMOTIONS}
        for i in range(n_batches):
            batch = []
            for e in EMOTIONS:
                rows = orders[e][i * per : (i + 1) * per]
                batch.extend(self.by_class[e][j] for j in rows)
            yield batch

    def batch(self, epoch: int, index: int, n_batches: int = BATCHES_PER_EPOCH):
        per = self.spec.per_class
        batch = []
        for e in EMOTIONS:
            order = self._epoch_order(e, epoch, per * n_batches)
            rows = order[index * per : (index + 1) * per]
            batch.extend(self.by_class[e][j] for j in rows)
        return batch


class MixedSourceSampler:
    """Per step: one class-balanced labeled batch plus one unlabeled batch
    drawn half-and-half from the two sources regardless of their sizes."""

    def __init__(
        self,
        hrl_records: list[UtteranceRecord],
        lrl_records: list[UtteranceRecord],
        stream: RngStream,
        balanced_spec: BalancedBatchSpec | None = None,
        ssl_batch_size: int = 64,
    ):
        if not hrl_records or not lrl_records:
            raise SamplingError("both data sources must be non-empty")
        self.hrl = sorted(hrl_records, key=lambda r: r.id)
        self.lrl = sorted(lrl_records, key=lambda r: r.id)
        self.ssl_batch_size = ssl_batch_size
        self.stream = stream
        self.balanced = BalancedBatchSampler(
            hrl_records, balanced_spec or BalancedBatchSpec(), stream.split("hrl")
        )

    def ssl_batch(self, epoch: int, index: int) -> list[UtteranceRecord]:
        rng = self.stream.split("ssl", epoch, index).generator()
        from_lrl = rng.random(self.ssl_batch_size) < 0.5
        batch = []
        for take_lrl in from_lrl:
            pool = self.lrl if take_lrl else self.hrl
            batch.append(pool[int(rng.integers(0, len(pool)))])
        return batch

    def batch(self, epoch: int, index: int):
        return self.balanced.batch(epoch, index), self.ssl_batch(epoch, index)

    def epoch(self, epoch: int, n_batches: int = BATCHES_PER_EPOCH):
        hrl_batches = self.balanced.epoch(epoch, n_batches)
        for i, hrl in enumerate(hrl_batches):
            yield hrl, self.ssl_batch(epoch, i)
