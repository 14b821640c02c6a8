"""Utterance manifests: JSON-lines ingestion, label normalization, duration
filtering, and leave-one-session-out split generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

EMOTIONS = ("angry", "happy", "neutral", "sad")
DISPLAY_NAMES = {"angry": "anger", "happy": "happiness", "neutral": "neutral", "sad": "sadness"}
GENDERS = ("female", "male", "unknown")
DROP = "DROP"


class ManifestError(ValueError):
    pass


@dataclass
class UtteranceRecord:
    """One manifest row: an audio reference plus its labels."""

    id: str
    audio_path: str
    speaker_id: str
    duration_s: float
    emotion: str | None = None
    gender: str = "unknown"
    session: str = ""
    language: str = ""
    split: str | None = None
    emotion_raw: str | None = None

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ManifestError(f"record {self.id!r}: duration_s must be > 0")
        if self.emotion is not None and self.emotion not in EMOTIONS:
            raise ManifestError(f"record {self.id!r}: emotion {self.emotion!r} outside {EMOTIONS}")
        if self.gender not in GENDERS:
            raise ManifestError(f"record {self.id!r}: gender {self.gender!r} outside {GENDERS}")
        if self.split is not None and self.split not in ("train", "validation", "test"):
            raise ManifestError(f"record {self.id!r}: bad split {self.split!r}")


@dataclass
class CorpusRole:
    """A manifest in one of the experiment roles."""

    role: str  # hrl_labeled | lrl_unlabeled | lrl_eval
    records: list[UtteranceRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.role not in ("hrl_labeled", "lrl_unlabeled", "lrl_eval"):
            raise ManifestError(f"unknown corpus role {self.role!r}")
        if self.role == "hrl_labeled":
            missing = [r.id for r in self.records if r.emotion is None]
            if missing:
                raise ManifestError(f"hrl_labeled records without emotion: {missing[:5]}")
        if self.role == "lrl_unlabeled":
            missing = [r.id for r in self.records if not r.speaker_id]
            if missing:
                raise ManifestError(f"lrl_unlabeled records without speaker_id: {missing[:5]}")


def check_unique_ids(records: list[UtteranceRecord]) -> None:
    seen = set()
    for r in records:
        if r.id in seen:
            raise ManifestError(f"duplicate record id {r.id!r}")
        seen.add(r.id)


def write_manifest(path, records: list[UtteranceRecord]) -> None:
    """JSON-lines, one record per line, UTF-8; absent fields omitted."""
    check_unique_ids(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {k: v for k, v in asdict(r).items() if v is not None and v != ""}
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def read_manifest(path) -> list[UtteranceRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            records.append(UtteranceRecord(**row))
    check_unique_ids(records)
    return records


def normalize_labels(
    records: list[UtteranceRecord], raw_label_map: dict[str, str]
) -> list[UtteranceRecord]:
    """Map raw corpus labels onto the four-class set; DROP removes the record.

    Records without any raw/known label pass through unlabeled.
    """
    out = []
    for r in records:
        raw = r.emotion_raw if r.emotion_raw is not None else r.emotion
        if raw is None:
            out.append(r)
            continue
        if raw in raw_label_map:
            mapped = raw_label_map[raw]
        elif raw in EMOTIONS:
            mapped = raw
        else:
            raise ManifestError(f"record {r.id!r}: unknown raw label {raw!r} with no map entry")
        if mapped == DROP:
            continue
        if mapped not in EMOTIONS:
            raise ManifestError(
                f"raw label {raw!r} maps to {mapped!r}, outside {EMOTIONS} and not DROP"
            )
        out.append(
            UtteranceRecord(
                id=r.id,
                audio_path=r.audio_path,
                speaker_id=r.speaker_id,
                duration_s=r.duration_s,
                emotion=mapped,
                gender=r.gender,
                session=r.session,
                language=r.language,
                split=r.split,
                emotion_raw=None,
            )
        )
    return out


DEFAULT_LABEL_MAP = {
    "excited": "happy",
    "angry": "angry",
    "anger": "angry",
    "happy": "happy",
    "happiness": "happy",
    "neutral": "neutral",
    "sad": "sad",
    "sadness": "sad",
}


def filter_duration(
    records: list[UtteranceRecord], min_s: float = 0.5, max_s: float = 12.0
) -> list[UtteranceRecord]:
    """Keep records with min_s <= duration_s <= max_s (closed interval)."""
    if not min_s < max_s:
        raise ManifestError(f"need min_s < max_s, got ({min_s}, {max_s})")
    return [r for r in records if min_s <= r.duration_s <= max_s]


def make_loso_splits(
    records: list[UtteranceRecord], n_folds: int | None = None
) -> list[tuple[list[UtteranceRecord], list[UtteranceRecord]]]:
    """Leave-one-session-out folds: fold k tests on session k, trains on the rest."""
    sessions = sorted({r.session for r in records})
    if n_folds is None:
        n_folds = len(sessions)
    if len(sessions) < n_folds:
        raise ManifestError(f"{len(sessions)} session(s) cannot form {n_folds} folds")
    if len(sessions) != n_folds:
        raise ManifestError(
            f"LOSO needs one fold per session: {len(sessions)} sessions vs {n_folds} folds"
        )
    folds = []
    for sess in sessions:
        test = [r for r in records if r.session == sess]
        train = [r for r in records if r.session != sess]
        folds.append((train, test))
    return folds
