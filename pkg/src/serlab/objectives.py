"""Training losses: speaker NT-Xent, cross-entropy, BYOL regression, and the
mixed objective with its linear weight schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from serlab import tensor as T

DENOMINATOR_MODES = ("include_positive", "negatives_only")


class ObjectiveError(ValueError):
    pass


@dataclass
class ContrastiveConfig:
    temperature: float = 0.1
    denominator_mode: str = "include_positive"

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ObjectiveError(f"temperature must be > 0, got {self.temperature}")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise ObjectiveError(
                f"denominator_mode must be one of {DENOMINATOR_MODES}, got {self.denominator_mode!r}"
            )


@dataclass
class MixedLossSchedule:
    lambda_start: float = 0.8
    lambda_end: float = 0.2
    total_steps: int = 1

    def validate(self) -> None:
        if self.total_steps < 1:
            raise ObjectiveError(f"total_steps must be >= 1, got {self.total_steps}")
        for lam in (self.lambda_start, self.lambda_end):
            if not 0.0 <= lam <= 1.0:
                raise ObjectiveError(f"lambda bounds must lie in [0, 1], got {lam}")


def lambda_at(step: int, schedule: MixedLossSchedule) -> float:
    """Linear interpolation from lambda_start at step 0 to lambda_end at T-1."""
    schedule.validate()
    if not 0 <= step < schedule.total_steps:
        raise ObjectiveError(f"step {step} outside [0, {schedule.total_steps})")
    if schedule.total_steps == 1:
        return schedule.lambda_start
    frac = step / (schedule.total_steps - 1)
    # convex form keeps both endpoints exact in floating point
    return (1.0 - frac) * schedule.lambda_start + frac * schedule.lambda_end


def nt_xent(
    embeddings: T.Tensor, speaker_labels, config: ContrastiveConfig | None = None
) -> T.Tensor:
    """Speaker-pair NT-Xent over a batch of embeddings.

    Positive pairs are ordered (i, j) with matching speaker labels; each
    anchor's denominator sums the similarity terms of every different-speaker
    embedding, plus the positive term itself in include_positive mode. The
    loss is the mean over all ordered positive pairs.
    """
    config = config or ContrastiveConfig()
    config.validate()
    labels = np.asarray(speaker_labels)
    n = embeddings.value.shape[0]
    if labels.shape[0] != n:
        raise ObjectiveError(f"{n} embeddings vs {labels.shape[0]} speaker labels")
    if np.unique(labels).size < 2:
        raise ObjectiveError("nt_xent needs at least 2 distinct speakers (no negatives otherwise)")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    if not pos_mask.any(axis=1).all():
        lonely = [str(labels[i]) for i in np.flatnonzero(~pos_mask.any(axis=1))[:5]]
        raise ObjectiveError(f"embeddings without a same-speaker partner: speakers {lonely}")
    neg_mask = ~same

    dt = embeddings.value.dtype
    z = T.l2_normalize(embeddings)
    sim = T.mul(T.matmul(z, T.transpose_last2(z)), np.asarray(1.0 / config.temperature, dtype=dt))
    exp_sim = T.exp(sim)
    neg_sum = T.sum_axis(T.mul(exp_sim, neg_mask.astype(dt)), axis=1, keepdims=True)
    if config.denominator_mode == "include_positive":
        denom = T.add(exp_sim, neg_sum)  # broadcast: per-pair positive + anchor negatives
    else:
        denom = neg_sum  # (n, 1), broadcast against sim below
    log_ratio = T.sub(sim, T.log(denom))
    pos = pos_mask.astype(dt)
    total = T.sum_axis(T.mul(log_ratio, pos))
    return T.mul(total, -1.0 / float(pos_mask.sum()))


def cross_entropy(logits: T.Tensor, labels, class_weights=None) -> T.Tensor:
    """Mean negative log-likelihood of the true class under softmax."""
    labels = np.asarray(labels)
    b, c = logits.value.shape
    if labels.shape[0] != b:
        raise ObjectiveError(f"{b} logit rows vs {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= c:
        raise ObjectiveError(f"labels must lie in [0, {c}), got range "
                             f"[{labels.min()}, {labels.max()}]")
    dt = logits.value.dtype
    onehot = np.zeros((b, c), dtype=dt)
    onehot[np.arange(b), labels] = 1.0
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=dt)[labels]
        onehot *= w[:, None]
        norm = float(w.sum())
    else:
        norm = float(b)
    nll = T.mul(T.sum_axis(T.mul(T.log_softmax(logits), onehot)), -1.0 / norm)
    return nll


def byol_loss(
    online_pred_one: T.Tensor,
    online_pred_two: T.Tensor,
    target_proj_one: np.ndarray,
    target_proj_two: np.ndarray,
) -> T.Tensor:
    """Symmetrized BYOL regression: 2 - 2*cos(q, z') per direction, averaged.

    Target projections are plain arrays (produced outside the graph), which
    enforces the stop-gradient structurally.
    """
    for arr in (target_proj_one, target_proj_two):
        if isinstance(arr, T.Tensor):
            raise ObjectiveError("target projections must be detached arrays, not graph nodes")
    for q, z in ((online_pred_one, target_proj_two), (online_pred_two, target_proj_one)):
        if q.value.shape != np.asarray(z).shape:
            raise ObjectiveError(f"prediction/projection shapes differ: {q.value.shape} vs {np.asarray(z).shape}")
    norms = [
        np.linalg.norm(online_pred_one.value, axis=-1),
        np.linalg.norm(online_pred_two.value, axis=-1),
        np.linalg.norm(np.asarray(target_proj_one), axis=-1),
        np.linalg.norm(np.asarray(target_proj_two), axis=-1),
    ]
    if any(np.any(n < 1e-12) for n in norms):
        raise ObjectiveError("byol_loss: zero-norm vector (cosine undefined)")

    def direction(q, z_arr):
        zn = np.asarray(z_arr, dtype=q.value.dtype)
        zn = zn / np.linalg.norm(zn, axis=-1, keepdims=True)
        cos = T.sum_axis(T.mul(T.l2_normalize(q), zn), axis=-1)
        return T.sub(2.0, T.mul(cos, 2.0))

    d1 = direction(online_pred_one, target_proj_two)
    d2 = direction(online_pred_two, target_proj_one)
    return T.mean_all(T.mul(T.add(d1, d2), 0.5))


def mixed_loss(ce: T.Tensor, byol: T.Tensor, lam: float) -> T.Tensor:
    """(1 - lambda) * CE + lambda * BYOL."""
    if not 0.0 <= lam <= 1.0:
        raise ObjectiveError(f"lambda must lie in [0, 1], got {lam}")
    return T.add(T.mul(ce, 1.0 - lam), T.mul(byol, lam))
