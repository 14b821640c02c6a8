"""Single-document JSON configuration: parsing, strict validation (unknown
keys rejected), and content hashing for run directories."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

from serlab.augment import AugmentSpec
from serlab.model import EncoderConfig
from serlab.pipelines import MODES, TrainConfig
from serlab.synth import (
    DEFAULT_CLASS_PROSODY,
    LanguageDomain,
    ProsodyRange,
    SynthCorpusConfig,
)


class ConfigError(ValueError):
    pass


TOP_LEVEL_KEYS = ("corpus", "encoder", "augment", "train", "train_overrides", "experiment")
EXPERIMENT_KEYS = ("seeds", "n_folds", "out_format")
TRAIN_KEYS = tuple(
    f.name for f in dataclasses.fields(TrainConfig) if f.name not in ("encoder", "augment")
)


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")


def _pair(value, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where} must be a [lo, hi] pair, got {value!r}")
    return (float(value[0]), float(value[1]))


def parse_corpus(section: dict) -> SynthCorpusConfig:
    allowed = tuple(f.name for f in dataclasses.fields(SynthCorpusConfig))
    _check_keys(section, allowed, "corpus")
    kwargs = dict(section)
    if "languages" in kwargs:
        langs = []
        for i, lang in enumerate(kwargs["languages"]):
            _check_keys(lang, ("tag", "pitch_offset_hz", "tilt_db_per_octave"), f"corpus.languages[{i}]")
            langs.append(
                LanguageDomain(
                    str(lang["tag"]),
                    float(lang.get("pitch_offset_hz", 0.0)),
                    float(lang.get("tilt_db_per_octave", 0.0)),
                )
            )
        kwargs["languages"] = tuple(langs)
    if "class_prosody" in kwargs:
        table = {}
        for emotion, ranges in kwargs["class_prosody"].items():
            _check_keys(
                ranges,
                ("pitch_mean_hz", "pitch_var_hz", "rms", "mod_rate_hz"),
                f"corpus.class_prosody.{emotion}",
            )
            base = DEFAULT_CLASS_PROSODY.get(emotion)
            table[emotion] = ProsodyRange(
                _pair(ranges.get("pitch_mean_hz", base and base.pitch_mean_hz), "pitch_mean_hz"),
                _pair(ranges.get("pitch_var_hz", base and base.pitch_var_hz), "pitch_var_hz"),
                _pair(ranges.get("rms", base and base.rms), "rms"),
                _pair(ranges.get("mod_rate_hz", base and base.mod_rate_hz), "mod_rate_hz"),
            )
        kwargs["class_prosody"] = table
    for name in ("duration_range",):
        if name in kwargs:
            kwargs[name] = _pair(kwargs[name], f"corpus.{name}")
    cfg = SynthCorpusConfig(**kwargs)
    cfg.validate()
    return cfg


def parse_encoder(section: dict) -> EncoderConfig:
    allowed = tuple(f.name for f in dataclasses.fields(EncoderConfig))
    _check_keys(section, allowed, "encoder")
    return EncoderConfig.from_dict(section)


def parse_augment(section: dict) -> AugmentSpec:
    allowed = tuple(f.name for f in dataclasses.fields(AugmentSpec))
    _check_keys(section, allowed, "augment")
    kwargs = dict(section)
    for name in ("noise_snr_db", "gain_db", "speed", "stretch", "rrc_scale"):
        if name in kwargs:
            kwargs[name] = _pair(kwargs[name], f"augment.{name}")
    spec = AugmentSpec(**kwargs)
    spec.validate()
    return spec


@dataclasses.dataclass
class LabConfig:
    corpus: SynthCorpusConfig
    encoder: EncoderConfig
    augment: AugmentSpec
    train: dict          # shared TrainConfig fields
    train_overrides: dict  # mode -> field overrides
    seeds: list[int]
    n_folds: int
    raw: dict
    config_hash: str

    def train_config(self, mode: str, seed: int | None = None) -> TrainConfig:
        if mode not in MODES:
            raise ConfigError(f"unknown training mode {mode!r}")
        fields = dict(self.train)
        fields.update(self.train_overrides.get(mode, {}))
        fields["mode"] = mode
        if seed is not None:
            fields["seed"] = seed
        cfg = TrainConfig(
            encoder=dataclasses.replace(self.encoder),
            augment=dataclasses.replace(self.augment),
            **fields,
        )
        cfg.validate()
        return cfg


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def parse_config(raw: dict) -> LabConfig:
    _check_keys(raw, TOP_LEVEL_KEYS, "config")
    corpus = parse_corpus(raw.get("corpus", {}))
    encoder = parse_encoder(raw.get("encoder", {}))
    augment = parse_augment(raw.get("augment", {}))
    train = dict(raw.get("train", {}))
    _check_keys(train, TRAIN_KEYS, "train")
    overrides = {}
    for mode, section in raw.get("train_overrides", {}).items():
        if mode not in MODES:
            raise ConfigError(f"train_overrides for unknown mode {mode!r}")
        _check_keys(section, TRAIN_KEYS, f"train_overrides.{mode}")
        overrides[mode] = dict(section)
    experiment = dict(raw.get("experiment", {}))
    _check_keys(experiment, EXPERIMENT_KEYS, "experiment")
    seeds = [int(s) for s in experiment.get("seeds", [1, 2, 3, 4, 5])]
    if not seeds:
        raise ConfigError("experiment.seeds must be non-empty")
    n_folds = int(experiment.get("n_folds", corpus.n_sessions))
    return LabConfig(
        corpus=corpus,
        encoder=encoder,
        augment=augment,
        train=train,
        train_overrides=overrides,
        seeds=seeds,
        n_folds=n_folds,
        raw=raw,
        config_hash=config_hash(raw),
    )


def load_config(path) -> LabConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(raw)
