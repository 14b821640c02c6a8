"""Manifest ingestion, label normalization, duration filtering, LOSO splits."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from serlab.manifest import (
    DROP,
    EMOTIONS,
    CorpusRole,
    ManifestError,
    UtteranceRecord,
    filter_duration,
    make_loso_splits,
    normalize_labels,
    read_manifest,
    write_manifest,
)


def rec(i, **kw):
    base = dict(
        id=f"u{i:03d}",
        audio_path=f"audio/u{i:03d}.wav",
        speaker_id=f"spk{i % 7}",
        duration_s=3.0,
        emotion="angry",
        gender="female",
        session=f"s{i % 5}",
        language="xx",
    )
    base.update(kw)
    return UtteranceRecord(**base)


class TestRecordInvariants:
    def test_duration_positive(self):
        with pytest.raises(ManifestError, match="duration"):
            rec(0, duration_s=0.0)

    def test_emotion_in_four_class_set(self):
        with pytest.raises(ManifestError, match="emotion"):
            rec(0, emotion="bored")

    def test_absent_emotion_allowed(self):
        assert rec(0, emotion=None).emotion is None

    def test_gender_checked(self):
        with pytest.raises(ManifestError, match="gender"):
            rec(0, gender="other")


class TestNormalizeLabels:
    def test_excited_merges_with_happy(self):
        out = normalize_labels([rec(0, emotion=None, emotion_raw="excited")], {"excited": "happy"})
        assert out[0].emotion == "happy"

    def test_identity_mapping(self):
        out = normalize_labels([rec(0, emotion="angry")], {})
        assert out[0].emotion == "angry"

    def test_drop_removes_record(self):
        out = normalize_labels([rec(0, emotion=None, emotion_raw="fear")], {"fear": DROP})
        assert out == []

    def test_unknown_label_named_in_error(self):
        with pytest.raises(ManifestError, match="surprise"):
            normalize_labels([rec(0, emotion=None, emotion_raw="surprise")], {})

    def test_unlabeled_record_passes_through(self):
        out = normalize_labels([rec(0, emotion=None)], {})
        assert out[0].emotion is None

    def test_idempotent(self):
        records = [
            rec(0, emotion=None, emotion_raw="excited"),
            rec(1, emotion="sad"),
            rec(2, emotion=None),
        ]
        table = {"excited": "happy"}
        once = normalize_labels(records, table)
        twice = normalize_labels(once, table)
        assert once == twice

    def test_bad_map_target_rejected(self):
        with pytest.raises(ManifestError, match="outside"):
            normalize_labels([rec(0, emotion=None, emotion_raw="x")], {"x": "bliss"})


class TestFilterDuration:
    def test_closed_interval_boundaries(self):
        durations = [0.4, 0.5, 3.0, 12.0, 12.1]
        records = [rec(i, duration_s=d) for i, d in enumerate(durations)]
        kept = filter_duration(records, 0.5, 12.0)
        assert [r.duration_s for r in kept] == [0.5, 3.0, 12.0]

    def test_empty_list(self):
        assert filter_duration([], 0.5, 12.0) == []

    def test_all_inside_unchanged(self):
        records = [rec(i, duration_s=2.0 + i) for i in range(5)]
        assert filter_duration(records, 0.5, 12.0) == records

    def test_bad_bounds_rejected(self):
        with pytest.raises(ManifestError):
            filter_duration([], 5.0, 1.0)


class TestLosoSplits:
    def test_five_even_sessions(self):
        records = [rec(i, session=f"s{i % 5}") for i in range(50)]
        folds = make_loso_splits(records)
        assert len(folds) == 5
        for train, test in folds:
            assert len(test) == 10
            assert len(train) == 40

    def test_single_session_five_folds_rejected(self):
        records = [rec(i, session="s0") for i in range(10)]
        with pytest.raises(ManifestError):
            make_loso_splits(records, 5)

    def test_uneven_session_sizes(self):
        sizes = {"a": 8, "b": 12, "c": 10, "d": 10, "e": 10}
        records = []
        i = 0
        for sess, n in sizes.items():
            for _ in range(n):
                records.append(rec(i, session=sess))
                i += 1
        folds = make_loso_splits(records)
        assert sorted(len(test) for _, test in folds) == [8, 10, 10, 10, 12]

    def test_folds_disjoint_and_cover(self):
        records = [rec(i, session=f"s{i % 5}") for i in range(37)]
        folds = make_loso_splits(records)
        seen = set()
        for _, test in folds:
            ids = {r.id for r in test}
            assert not ids & seen
            seen |= ids
        assert seen == {r.id for r in records}

    def test_train_test_partition_per_fold(self):
        records = [rec(i, session=f"s{i % 3}") for i in range(12)]
        for train, test in make_loso_splits(records):
            assert {r.id for r in train} | {r.id for r in test} == {r.id for r in records}
            assert not {r.id for r in train} & {r.id for r in test}


class TestManifestIO:
    def test_roundtrip_structural_equality(self, tmp_path):
        records = [
            rec(0),
            rec(1, emotion=None, split="test"),
            rec(2, gender="unknown", language="yy"),
        ]
        path = tmp_path / "m.jsonl"
        write_manifest(path, records)
        assert read_manifest(path) == records

    def test_absent_fields_omitted(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [rec(0, emotion=None)])
        line = path.read_text().strip()
        assert '"emotion"' not in line
        assert '"split"' not in line

    def test_duplicate_ids_rejected(self, tmp_path):
        with pytest.raises(ManifestError, match="duplicate"):
            write_manifest(tmp_path / "m.jsonl", [rec(0), rec(0)])

    def test_invalid_json_line_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "a"\n', encoding="utf-8")
        with pytest.raises(ManifestError, match="invalid JSON"):
            read_manifest(path)


class TestCorpusRole:
    def test_hrl_labeled_requires_emotions(self):
        with pytest.raises(ManifestError, match="without emotion"):
            CorpusRole("hrl_labeled", [rec(0, emotion=None)])

    def test_lrl_unlabeled_requires_speakers(self):
        with pytest.raises(ManifestError, match="speaker"):
            CorpusRole("lrl_unlabeled", [rec(0, speaker_id="")])

    def test_unknown_role_rejected(self):
        with pytest.raises(ManifestError, match="role"):
            CorpusRole("mystery", [])


@settings(max_examples=25, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(EMOTIONS + ("excited",)), st.floats(0.1, 20.0)),
        min_size=0,
        max_size=30,
    )
)
def test_normalize_then_filter_idempotent(items):
    records = [
        rec(i, emotion=None, emotion_raw=raw, duration_s=dur) for i, (raw, dur) in enumerate(items)
    ]
    table = {"excited": "happy"}
    once = filter_duration(normalize_labels(records, table), 0.5, 12.0)
    twice = filter_duration(normalize_labels(once, table), 0.5, 12.0)
    assert once == twice
    assert all(r.emotion in EMOTIONS for r in once)
