"""The three trainable recipes: baseline supervised, two-stage contrastive
(speaker adaptation then emotion fine-tuning), and single-stage mixed
supervised+BYOL training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from serlab import tensor as T
from serlab.augment import AugmentSpec
from serlab.checkpoint import Checkpoint
from serlab.features import FeaturePipeline, label_index
from serlab.manifest import UtteranceRecord
from serlab.model import EncoderConfig, classify, encode, init_params, project_predict
from serlab.objectives import (
    ContrastiveConfig,
    MixedLossSchedule,
    byol_loss,
    cross_entropy,
    lambda_at,
    mixed_loss,
    nt_xent,
)
from serlab.rng import RngStream
from serlab.sampling import (
    BalancedBatchSampler,
    BalancedBatchSpec,
    MixedSourceSampler,
    SamplingError,
    SpeakerBatchSampler,
    SpeakerBatchSpec,
)
from serlab.evaluate import EvalReport, compute_metrics

MODES = ("baseline", "contrastive_adapt", "finetune", "byol_mixed")
ENCODER_PREFIXES = ("conv1.", "conv2.", "posenc", "block")
HEAD_PREFIXES = ("head.",)


class PipelineError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "baseline"
    lr: float = 1e-5
    batch_size: int = 64
    batches_per_epoch: int = 100
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    lambda_start: float = 0.8
    lambda_end: float = 0.2
    momentum: float = 0.99
    temperature: float = 0.1
    denominator_mode: str = "include_positive"
    weight_decay: float = 0.01
    cl_frames: int = 400
    byol_frames: int = 300
    positives: str = "speaker"  # | same_utterance
    n_speakers_per_batch: int = 16
    utterances_per_speaker: int = 4
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise PipelineError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.lr <= 0 or self.max_epochs < 1 or self.batches_per_epoch < 1:
            raise PipelineError("lr, max_epochs, batches_per_epoch must be positive")
        if self.positives not in ("speaker", "same_utterance"):
            raise PipelineError(
                f"positives must be 'speaker' or 'same_utterance', got {self.positives!r}"
            )
        if not 0.0 <= self.momentum <= 1.0:
            raise PipelineError(f"momentum must lie in [0, 1], got {self.momentum}")
        self.encoder.validate()
        self.augment.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d


@dataclass
class RoleData:
    """Record lists per corpus role for one fold."""

    audio_root: str
    hrl_train: list[UtteranceRecord] = field(default_factory=list)
    hrl_val: list[UtteranceRecord] = field(default_factory=list)
    lrl_train: list[UtteranceRecord] = field(default_factory=list)
    lrl_val: list[UtteranceRecord] = field(default_factory=list)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[float]
    best_epoch: int
    log_rows: list[dict]
    epochs_run: int


def early_stop(history: list[float], patience: int) -> tuple[bool, int]:
    """Walk a validation-metric history (higher is better): stop once there is
    no strict improvement for `patience` consecutive epochs. Returns (stop
    decision at the end of the history, best epoch index)."""
    best = -math.inf
    best_epoch = -1
    bad = 0
    for epoch, value in enumerate(history):
        if value > best:
            best = value
            best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad >= patience:
                return True, best_epoch
    return False, best_epoch


class _BestTracker:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.bad = 0
        self.best_store: T.ParameterStore | None = None
        self.best_target: T.ParameterStore | None = None

    def update(self, value, epoch, store, target=None) -> bool:
        if value > self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad = 0
            self.best_store = store.copy()
            self.best_target = target.copy() if target is not None else None
            return False
        self.bad += 1
        return self.bad >= self.patience


def _inference_store(ckpt: Checkpoint) -> T.ParameterStore:
    """Prediction-time parameters: the target encoder (when present) with the
    online-trained classification head."""
    if ckpt.target_store is None:
        return ckpt.store
    merged = ckpt.store.copy()
    for name, arr in ckpt.target_store.entries.items():
        if name.startswith(ENCODER_PREFIXES):
            merged.entries[name] = arr.copy()
    return merged


def predict_records(
    store: T.ParameterStore,
    enc_cfg: EncoderConfig,
    pipeline: FeaturePipeline,
    records: list[UtteranceRecord],
    frames: int,
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode embeddings and class predictions over clean centered features."""
    embs, preds = [], []
    bound = store.bind()
    for i in range(0, len(records), batch_size):
        chunk = records[i : i + batch_size]
        feats = pipeline.eval_batch(chunk, frames)
        emb = encode(feats, bound, enc_cfg, train_mode=False)
        logits = classify(emb, bound, enc_cfg, train_mode=False)
        embs.append(emb.value)
        preds.append(np.argmax(logits.value, axis=1))
    return np.concatenate(embs), np.concatenate(preds)


def evaluate_checkpoint(
    ckpt: Checkpoint,
    pipeline: FeaturePipeline,
    records: list[UtteranceRecord],
    frames: int | None = None,
) -> EvalReport:
    enc_cfg = EncoderConfig.from_dict(ckpt.encoder_config)
    if frames is None:
        frames = enc_cfg.max_frames
    _, preds = predict_records(_inference_store(ckpt), enc_cfg, pipeline, records, frames)
    truths = [label_index(r) for r in records]
    genders = [r.gender for r in records]
    return compute_metrics(truths, preds, genders)


def _val_macro_f1(store, enc_cfg, pipeline, records, frames) -> float:
    _, preds = predict_records(store, enc_cfg, pipeline, records, frames)
    return compute_metrics([label_index(r) for r in records], preds).macro_f1


def _make_pipeline(config: TrainConfig, data: RoleData) -> FeaturePipeline:
    return FeaturePipeline(
        data.audio_root,
        config.augment,
        RngStream(config.seed).split("features"),
        config.cl_frames,
        config.byol_frames,
    )


def _supervised_loop(
    config: TrainConfig,
    data: RoleData,
    store: T.ParameterStore,
    mode_tag: str,
    batch_override=None,
) -> TrainResult:
    """Shared CE loop for baseline training and stage-2 fine-tuning."""
    if not data.hrl_train:
        raise PipelineError(f"{mode_tag} needs hrl_labeled training records")
    if not data.hrl_val:
        raise PipelineError(f"{mode_tag} needs hrl validation records for early stopping")
    stream = RngStream(config.seed)
    pipeline = _make_pipeline(config, data)
    sampler = BalancedBatchSampler(
        data.hrl_train, BalancedBatchSpec(config.batch_size), stream.split("batches")
    )
    enc_cfg = config.encoder
    tracker = _BestTracker(config.patience)
    history: list[float] = []
    log_rows: list[dict] = []
    step = 0
    epochs_run = 0
    for epoch in range(config.max_epochs):
        for i in range(config.batches_per_epoch):
            if batch_override is not None:
                feats, labels = batch_override(epoch, i)
            else:
                records = sampler.batch(epoch, i, config.batches_per_epoch)
                feats, labels = pipeline.baseline_batch(records, epoch, i)
            bound = store.bind()
            emb = encode(feats, bound, enc_cfg, train_mode=True)
            logits = classify(
                emb, bound, enc_cfg, train_mode=True,
                rng=stream.split("dropout", epoch, i).generator(),
            )
            loss = cross_entropy(logits, labels)
            T.backward(loss)
            T.adamw_step(store, T.grad_map(bound), config.lr, weight_decay=config.weight_decay)
            log_rows.append({"step": step, "epoch": epoch, "ce": float(loss.value)})
            step += 1
        epochs_run = epoch + 1
        val = _val_macro_f1(store, enc_cfg, pipeline, data.hrl_val, config.cl_frames)
        history.append(val)
        log_rows.append({"epoch": epoch, "val_macro_f1": val})
        if tracker.update(val, epoch, store):
            break
    ckpt = Checkpoint(
        store=tracker.best_store,
        epoch=tracker.best_epoch,
        best_metric=tracker.best,
        mode=mode_tag,
        encoder_config=enc_cfg.to_dict(),
    )
    return TrainResult(ckpt, history, tracker.best_epoch, log_rows, epochs_run)


def train_baseline(config: TrainConfig, data: RoleData, batch_override=None) -> TrainResult:
    """Supervised training on single augmented views of the labeled source domain."""
    config.validate()
    store = init_params(config.encoder, RngStream(config.seed).split("init"))
    return _supervised_loop(config, data, store, "baseline", batch_override)


def train_finetune(config: TrainConfig, data: RoleData, init: Checkpoint | None) -> TrainResult:
    """Stage 2: CE fine-tuning from stage-1 encoder weights with a fresh head
    and fresh optimizer state. Without an init checkpoint this degenerates to
    baseline training."""
    config.validate()
    store = init_params(config.encoder, RngStream(config.seed).split("init"))
    if init is not None:
        for name, arr in init.store.entries.items():
            if name.startswith(ENCODER_PREFIXES):
                if name not in store.entries or store.entries[name].shape != arr.shape:
                    raise PipelineError(
                        f"checkpoint entry {name!r} does not fit the configured encoder"
                    )
                store.entries[name] = arr.copy()
    return _supervised_loop(config, data, store, "finetune")


def train_contrastive_adapt(config: TrainConfig, data: RoleData) -> TrainResult:
    """Stage 1: speaker NT-Xent over clean+augmented view pairs of the
    unlabeled target domain; emotion labels are never read."""
    config.validate()
    if not data.lrl_train:
        raise PipelineError("contrastive_adapt needs lrl_unlabeled training records")
    stream = RngStream(config.seed)
    pipeline = _make_pipeline(config, data)
    spec = SpeakerBatchSpec(config.n_speakers_per_batch, config.utterances_per_speaker)
    sampler = SpeakerBatchSampler(data.lrl_train, spec, stream.split("batches"))
    val_sampler = None
    if data.lrl_val:
        val_speakers = {r.speaker_id for r in data.lrl_val}
        val_spec = SpeakerBatchSpec(
            min(spec.n_speakers, max(2, len(val_speakers))), spec.utterances_per_speaker
        )
        try:
            val_sampler = SpeakerBatchSampler(data.lrl_val, val_spec, stream.split("val_batches"))
        except SamplingError:
            val_sampler = None
    store = init_params(config.encoder, stream.split("init"))
    enc_cfg = config.encoder
    contrastive = ContrastiveConfig(config.temperature, config.denominator_mode)
    tracker = _BestTracker(config.patience)
    history: list[float] = []
    log_rows: list[dict] = []
    step = 0
    epochs_run = 0
    n_val_batches = 4

    def contrastive_loss(feats, labels, bound, train_mode):
        emb = encode(feats, bound, enc_cfg, train_mode=train_mode)
        # contrast batch-standardized embeddings: a shared additive offset in
        # the raw pooled features saturates every cosine toward 1, and the
        # loss can reach its all-equal saddle by just growing that offset.
        # Standardizing removes the translation shortcut (as the momentum
        # recipe's projector does) so speaker structure is the only way down.
        return nt_xent(T.batch_standardize(emb), labels, contrastive)

    def val_loss() -> float:
        if val_sampler is None:
            return -math.inf
        total = 0.0
        bound = store.bind()
        for i in range(n_val_batches):
            records = val_sampler.batch(0, i)
            feats, labels = pipeline.cl_batch(records, -1, i, config.positives)
            total += float(contrastive_loss(feats, labels, bound, False).value)
        return total / n_val_batches

    for epoch in range(config.max_epochs):
        for i in range(config.batches_per_epoch):
            records = sampler.batch(epoch, i)
            feats, labels = pipeline.cl_batch(records, epoch, i, config.positives)
            bound = store.bind()
            loss = contrastive_loss(feats, labels, bound, True)
            T.backward(loss)
            T.adamw_step(store, T.grad_map(bound), config.lr, weight_decay=config.weight_decay)
            log_rows.append({"step": step, "epoch": epoch, "ntxent": float(loss.value)})
            step += 1
        epochs_run = epoch + 1
        val = val_loss()
        have_val = val != -math.inf
        history.append(val if have_val else float("nan"))
        log_rows.append({"epoch": epoch, "val_ntxent": val if have_val else None})
        # lower NT-Xent is better; the tracker maximizes. Without validation
        # data the latest epoch always counts as best and training runs out.
        if tracker.update(-val if have_val else float(epoch), epoch, store):
            break
    ckpt = Checkpoint(
        store=tracker.best_store,
        epoch=tracker.best_epoch,
        best_metric=tracker.best,
        mode="contrastive_adapt",
        encoder_config=enc_cfg.to_dict(),
    )
    return TrainResult(ckpt, history, tracker.best_epoch, log_rows, epochs_run)


def train_byol_mixed(config: TrainConfig, data: RoleData, batch_override=None) -> TrainResult:
    """Single-stage recipe: CE on labeled-source views plus a momentum-target
    regression on mixed-source views, weighted by the scheduled factor."""
    config.validate()
    if not data.hrl_train:
        raise PipelineError("byol_mixed needs hrl_labeled training records")
    if not data.lrl_train:
        raise PipelineError("byol_mixed needs lrl_unlabeled training records")
    if not data.hrl_val:
        raise PipelineError("byol_mixed needs hrl validation records for early stopping")
    stream = RngStream(config.seed)
    pipeline = _make_pipeline(config, data)
    sampler = MixedSourceSampler(
        data.hrl_train,
        data.lrl_train,
        stream.split("batches"),
        BalancedBatchSpec(config.batch_size),
        ssl_batch_size=config.batch_size,
    )
    online = init_params(config.encoder, stream.split("init"))
    enc_cfg = config.encoder
    target = online.copy()
    pair = T.OnlineTargetPair(online, target, config.momentum)
    schedule = MixedLossSchedule(
        config.lambda_start, config.lambda_end, config.max_epochs * config.batches_per_epoch
    )
    tracker = _BestTracker(config.patience)
    history: list[float] = []
    log_rows: list[dict] = []
    step = 0
    epochs_run = 0
    for epoch in range(config.max_epochs):
        for i in range(config.batches_per_epoch):
            hrl_records, ssl_records = sampler.batch(epoch, i)
            lam = lambda_at(step, schedule)
            if batch_override is not None:
                feats, labels = batch_override(epoch, i)
            else:
                feats, labels = pipeline.byol_supervised_batch(hrl_records, epoch, i)
            bound = online.bind()
            emb = encode(feats, bound, enc_cfg, train_mode=True)
            logits = classify(
                emb, bound, enc_cfg, train_mode=True,
                rng=stream.split("dropout", epoch, i).generator(),
            )
            ce = cross_entropy(logits, labels)
            byol_val = None
            if lam > 0.0:
                v1, v2 = pipeline.byol_ssl_batch(ssl_records, epoch, i)
                b = v1.shape[0]
                both = np.concatenate([v1, v2], axis=0)
                q = project_predict(
                    project_predict(encode(both, bound, enc_cfg, train_mode=True), bound, "projector"),
                    bound,
                    "predictor",
                )
                ro = target.bind_readonly()
                z = project_predict(encode(both, ro, enc_cfg, train_mode=False), ro, "projector").value
                byol = byol_loss(
                    T.slice_rows(q, 0, b), T.slice_rows(q, b, 2 * b), z[:b], z[b:]
                )
                byol_val = float(byol.value)
            else:
                byol = T.constant(np.asarray(0.0, dtype=np.float32))
            total = mixed_loss(ce, byol, lam)
            T.backward(total)
            T.adamw_step(online, T.grad_map(bound), config.lr, weight_decay=config.weight_decay)
            T.ema_update(pair)
            log_rows.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "ce": float(ce.value),
                    "byol": byol_val,
                    "lambda": lam,
                    "mixed": float(total.value),
                }
            )
            step += 1
        epochs_run = epoch + 1
        val_ckpt = Checkpoint(
            store=online, target_store=target, encoder_config=enc_cfg.to_dict()
        )
        val = _val_macro_f1(
            _inference_store(val_ckpt), enc_cfg, pipeline, data.hrl_val, config.byol_frames
        )
        history.append(val)
        log_rows.append({"epoch": epoch, "val_macro_f1": val})
        if tracker.update(val, epoch, online, target):
            break
    ckpt = Checkpoint(
        store=tracker.best_store,
        target_store=tracker.best_target,
        epoch=tracker.best_epoch,
        best_metric=tracker.best,
        mode="byol_mixed",
        encoder_config=enc_cfg.to_dict(),
    )
    return TrainResult(ckpt, history, tracker.best_epoch, log_rows, epochs_run)


TRAINERS = {
    "baseline": train_baseline,
    "contrastive_adapt": train_contrastive_adapt,
    "byol_mixed": train_byol_mixed,
}


def train(config: TrainConfig, data: RoleData, init: Checkpoint | None = None) -> TrainResult:
    """Mode dispatch; `init` is only meaningful for fine-tuning."""
    config.validate()
    if config.mode == "finetune":
        return train_finetune(config, data, init)
    return TRAINERS[config.mode](config, data)
