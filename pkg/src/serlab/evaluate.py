"""Metrics, analysis tables, and fairness reports.

Class display order is fixed to [anger, happiness, neutral, sadness]; the
comparison table renders mean_(std) cells and the confusion delta renders a
signed Truth\\Pred matrix.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from serlab.manifest import DISPLAY_NAMES, EMOTIONS

DISPLAY_ORDER = [DISPLAY_NAMES[e] for e in EMOTIONS]


class EvalError(ValueError):
    pass


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    uar: float
    confusion: list[list[int]]  # rows = truth, cols = prediction
    per_class_recall: dict[str, float]
    per_gender_recall: dict[str, float] = field(default_factory=dict)
    gender_counts: dict[str, int] = field(default_factory=dict)
    n_samples: int = 0
    zero_support_classes: list[str] = field(default_factory=list)
    mean: dict[str, float] | None = None
    std: dict[str, float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _class_index(labels, n_classes: int = len(EMOTIONS)) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.dtype.kind in "iu":
        idx = arr.astype(int)
        if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
            raise EvalError(f"class indices outside [0, {n_classes})")
        return idx
    lookup = {e: i for i, e in enumerate(EMOTIONS)}
    try:
        return np.array([lookup[v] for v in arr], dtype=int)
    except KeyError as exc:
        raise EvalError(f"unknown emotion label {exc.args[0]!r}") from exc


def _class_names(n_classes: int) -> list[str]:
    if n_classes == len(EMOTIONS):
        return list(EMOTIONS)
    return [f"class{i}" for i in range(n_classes)]


def compute_metrics(truths, predictions, genders=None, n_classes: int = len(EMOTIONS)) -> EvalReport:
    """Accuracy, macro F1, UAR, confusion counts, and per-group recalls.

    Zero-support classes contribute 0 to the macro averages and are flagged.
    """
    t = _class_index(truths, n_classes)
    p = _class_index(predictions, n_classes)
    if t.shape != p.shape:
        raise EvalError(f"length mismatch: {t.shape[0]} truths vs {p.shape[0]} predictions")
    if t.size == 0:
        raise EvalError("empty input")
    n_cls = n_classes
    names = _class_names(n_cls)
    confusion = np.zeros((n_cls, n_cls), dtype=int)
    np.add.at(confusion, (t, p), 1)

    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diag(confusion)
    zero_support = [names[i] for i in range(n_cls) if support[i] == 0]
    if zero_support:
        warnings.warn(f"zero-support classes counted as 0: {zero_support}")

    recall = np.divide(diag, support, out=np.zeros(n_cls), where=support > 0)
    precision = np.divide(diag, predicted, out=np.zeros(n_cls), where=predicted > 0)
    pr_sum = precision + recall
    f1 = np.divide(2 * precision * recall, pr_sum, out=np.zeros(n_cls), where=pr_sum > 0)

    report = EvalReport(
        accuracy=float(diag.sum() / t.size),
        macro_f1=float(f1.mean()),
        uar=float(recall.mean()),
        confusion=confusion.tolist(),
        per_class_recall={names[i]: float(recall[i]) for i in range(n_cls)},
        n_samples=int(t.size),
        zero_support_classes=zero_support,
    )
    if genders is not None:
        recalls, counts = gender_report(truths, predictions, genders)
        report.per_gender_recall = recalls
        report.gender_counts = counts
    return report


def gender_report(truths, predictions, genders) -> tuple[dict[str, float], dict[str, int]]:
    """Fraction of correct predictions within each gender group, plus sizes."""
    t = _class_index(truths)
    p = _class_index(predictions)
    g = np.asarray(genders)
    if g.shape[0] != t.shape[0]:
        raise EvalError(f"genders length {g.shape[0]} vs labels {t.shape[0]}")
    known = {"female", "male"}
    groups = sorted({str(v) if str(v) in known else "unknown" for v in g})
    recalls, counts = {}, {}
    for grp in groups:
        if grp == "unknown":
            mask = np.array([str(v) not in known for v in g])
        else:
            mask = g == grp
        counts[grp] = int(mask.sum())
        recalls[grp] = float((t[mask] == p[mask]).mean()) if counts[grp] else 0.0
    return recalls, counts


def gender_class_breakdown(truths, predictions, genders) -> dict[str, dict[str, float]]:
    """Per-gender per-class recall, the finer-grained companion report."""
    t = _class_index(truths)
    p = _class_index(predictions)
    g = np.asarray(genders)
    out: dict[str, dict[str, float]] = {}
    for grp in sorted(set(map(str, g))):
        mask = g == grp
        per = {}
        for i, emo in enumerate(EMOTIONS):
            cls_mask = mask & (t == i)
            per[emo] = float((p[cls_mask] == i).mean()) if cls_mask.any() else float("nan")
        out[grp] = per
    return out


def confusion_delta(model_a_confusions: list, model_b_confusions: list) -> np.ndarray:
    """Entrywise mean(A) - mean(B) over folds, rounded to signed integers."""
    a = np.asarray(model_a_confusions, dtype=np.float64)
    b = np.asarray(model_b_confusions, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise EvalError(f"fold structures differ: {a.shape} vs {b.shape}")
    delta = a.mean(axis=0) - b.mean(axis=0)
    return np.rint(delta).astype(int)


def aggregate_runs(reports: list[EvalReport]) -> EvalReport:
    """Mean and sample std (n-1) of the scalar metrics across runs."""
    if len(reports) < 2:
        raise EvalError(f"need >= 2 reports to aggregate, got {len(reports)}")
    metrics = {
        name: np.array([getattr(r, name) for r in reports], dtype=np.float64)
        for name in ("accuracy", "macro_f1", "uar")
    }
    mean = {k: float(v.mean()) for k, v in metrics.items()}
    std = {k: float(v.std(ddof=1)) for k, v in metrics.items()}
    total_conf = np.sum([np.asarray(r.confusion) for r in reports], axis=0)
    merged = EvalReport(
        accuracy=mean["accuracy"],
        macro_f1=mean["macro_f1"],
        uar=mean["uar"],
        confusion=total_conf.tolist(),
        per_class_recall={
            e: float(np.mean([r.per_class_recall[e] for r in reports]))
            for e in reports[0].per_class_recall
        },
        n_samples=int(sum(r.n_samples for r in reports)),
        mean=mean,
        std=std,
    )
    genders = sorted({g for r in reports for g in r.per_gender_recall})
    if genders:
        merged.per_gender_recall = {
            g: float(np.mean([r.per_gender_recall[g] for r in reports if g in r.per_gender_recall]))
            for g in genders
        }
        merged.gender_counts = {
            g: int(sum(r.gender_counts.get(g, 0) for r in reports)) for g in genders
        }
    return merged


# ---------------------------------------------------------------------------
# rendering


def format_cell(mean: float, std: float | None = None) -> str:
    return f"{mean:.3f}" if std is None else f"{mean:.3f}_({std:.3f})"


def render_comparison_table(rows: dict[str, dict[str, tuple[float, float | None]]]) -> str:
    """Model-comparison table; one row per metric, mean_(std) cells.

    `rows` maps model name -> {metric -> (mean, std)}.
    """
    models = list(rows)
    metrics = ["Accuracy", "Macro F1", "UAR"]
    keys = {"Accuracy": "accuracy", "Macro F1": "macro_f1", "UAR": "uar"}
    widths = [12] + [max(16, len(m) + 2) for m in models]
    header = "Metric_(std)".ljust(widths[0]) + "".join(
        m.rjust(w) for m, w in zip(models, widths[1:])
    )
    lines = [header, "-" * len(header)]
    for metric in metrics:
        cells = []
        for m, w in zip(models, widths[1:]):
            mean, std = rows[m][keys[metric]]
            cells.append(format_cell(mean, std).rjust(w))
        lines.append(metric.ljust(widths[0]) + "".join(cells))
    return "\n".join(lines)


def render_confusion_delta(delta: np.ndarray) -> str:
    """Signed Truth\\Pred matrix in the fixed display order."""
    delta = np.asarray(delta)
    if delta.shape != (len(EMOTIONS), len(EMOTIONS)):
        raise EvalError(f"expected a {len(EMOTIONS)}x{len(EMOTIONS)} delta, got {delta.shape}")
    width = max(len(n) for n in DISPLAY_ORDER) + 2
    header = "Truth\\Pred".ljust(12) + "".join(n.rjust(width) for n in DISPLAY_ORDER)
    lines = [header, "-" * len(header)]
    for i, name in enumerate(DISPLAY_ORDER):
        cells = []
        for j in range(len(EMOTIONS)):
            v = int(delta[i, j])
            cells.append(("+" + str(v) if v > 0 else str(v)).rjust(width))
        lines.append(name.ljust(12) + "".join(cells))
    return "\n".join(lines)


def render_gender_report(recalls: dict[str, float], counts: dict[str, int]) -> str:
    total = sum(counts.values())
    lines = ["Per-gender correctness:"]
    for grp in sorted(recalls):
        share = counts[grp] / total if total else 0.0
        lines.append(
            f"  {grp}: {recalls[grp] * 100.0:.0f}% correct ({counts[grp]} samples, {share * 100.0:.0f}% of set)"
        )
    if len(counts) == 2:
        hi = max(counts.values())
        lines.append(f"  imbalance ratio: {hi / total * 100.0:.0f}% majority")
    return "\n".join(lines)


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)


def export_embeddings(records, embeddings: np.ndarray, out_path) -> None:
    """CSV export: id, emotion, gender, language, then the embedding values."""
    embeddings = np.asarray(embeddings)
    if len(records) != embeddings.shape[0]:
        raise EvalError(f"{len(records)} records vs {embeddings.shape[0]} embedding rows")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    d = embeddings.shape[1]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "emotion", "gender", "language"] + [f"e{i}" for i in range(d)])
        for rec, emb in zip(records, embeddings):
            writer.writerow(
                [rec.id, rec.emotion or "", rec.gender, rec.language]
                + [np.format_float_positional(v, unique=True) for v in emb.astype(np.float32)]
            )
