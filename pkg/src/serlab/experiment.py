"""Full experimental workflow: train baseline, two-stage contrastive, and
mixed-objective models on paired (seed, fold) slots, evaluate zero-shot on
the held-out target-domain session, and aggregate the comparison bundle."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from serlab.checkpoint import Checkpoint, save_checkpoint
from serlab.config import LabConfig
from serlab.evaluate import (
    EvalReport,
    aggregate_runs,
    compute_metrics,
    confusion_delta,
    gender_report,
    render_comparison_table,
    render_confusion_delta,
    render_gender_report,
)
from serlab.features import FeaturePipeline, label_index
from serlab.manifest import UtteranceRecord, read_manifest
from serlab.pipelines import (
    RoleData,
    TrainResult,
    evaluate_checkpoint,
    train_baseline,
    train_byol_mixed,
    train_contrastive_adapt,
    train_finetune,
)
from serlab.rng import RngStream

MODELS = ("Baseline", "Contrastive", "BYOL")


class ExperimentError(ValueError):
    pass


def worker_cap(n_jobs_wanted: int) -> int:
    """Parallel worker count: bounded by SER_LAB_THREADS (the only environment
    variable the lab reads) and the visible CPU count."""
    cap = os.cpu_count() or 1
    env = os.environ.get("SER_LAB_THREADS")
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError:
            raise ExperimentError(f"SER_LAB_THREADS must be an integer, got {env!r}")
    return max(1, min(n_jobs_wanted, cap))


@dataclass
class FoldData:
    """Record subsets for one (seed, fold) slot."""

    fold_session: str
    role_data: RoleData
    lrl_test: list[UtteranceRecord]


def split_fold(
    records: list[UtteranceRecord],
    fold_session: str,
    hrl_tag: str,
    lrl_tag: str,
    audio_root,
    sessions: list[str] | None = None,
) -> FoldData:
    """Partition by session: target-domain test = the fold session; source
    validation = the same session of the source domain; self-supervised
    validation = the next session; everything else trains."""
    hrl = [r for r in records if r.language == hrl_tag]
    lrl = [r for r in records if r.language == lrl_tag]
    if not hrl or not lrl:
        raise ExperimentError(f"missing domain records for tags ({hrl_tag!r}, {lrl_tag!r})")
    if sessions is None:
        sessions = sorted({r.session for r in records})
    if fold_session not in sessions:
        raise ExperimentError(f"fold session {fold_session!r} not among {sessions}")
    nxt = sessions[(sessions.index(fold_session) + 1) % len(sessions)]
    role_data = RoleData(
        audio_root=str(audio_root),
        hrl_train=[r for r in hrl if r.session != fold_session],
        hrl_val=[r for r in hrl if r.session == fold_session],
        lrl_train=[r for r in lrl if r.session not in (fold_session, nxt)],
        lrl_val=[r for r in lrl if r.session == nxt],
    )
    return FoldData(
        fold_session=fold_session,
        role_data=role_data,
        lrl_test=[r for r in lrl if r.session == fold_session],
    )


@dataclass
class SeedOutcome:
    seed: int
    fold_session: str
    reports: dict[str, EvalReport]
    confusions: dict[str, list[list[int]]]
    epochs: dict[str, int] = field(default_factory=dict)


def _eval_on_test(result: TrainResult, fold: FoldData, config, frames: int) -> EvalReport:
    pipeline = FeaturePipeline(
        fold.role_data.audio_root,
        config.augment,
        RngStream(config.seed).split("eval"),
        config.cl_frames,
        config.byol_frames,
    )
    return evaluate_checkpoint(result.checkpoint, pipeline, fold.lrl_test, frames)


def run_seed(
    lab: LabConfig,
    manifest_path,
    audio_root,
    seed: int,
    fold_session: str,
    out_dir: Path | None = None,
) -> SeedOutcome:
    """Train and evaluate all three models for one (seed, fold) slot."""
    records = read_manifest(manifest_path)
    hrl_tag, lrl_tag = (lang.tag for lang in lab.corpus.languages[:2])
    fold = split_fold(records, fold_session, hrl_tag, lrl_tag, audio_root)

    outcomes: dict[str, EvalReport] = {}
    confusions: dict[str, list[list[int]]] = {}
    epochs: dict[str, int] = {}
    logs: dict[str, list[dict]] = {}

    base_cfg = lab.train_config("baseline", seed)
    base_res = train_baseline(base_cfg, fold.role_data)
    outcomes["Baseline"] = _eval_on_test(base_res, fold, base_cfg, base_cfg.cl_frames)
    confusions["Baseline"] = outcomes["Baseline"].confusion
    epochs["Baseline"] = base_res.epochs_run
    logs["baseline"] = base_res.log_rows

    adapt_cfg = lab.train_config("contrastive_adapt", seed)
    adapt_res = train_contrastive_adapt(adapt_cfg, fold.role_data)
    ft_cfg = lab.train_config("finetune", seed)
    ft_res = train_finetune(ft_cfg, fold.role_data, adapt_res.checkpoint)
    outcomes["Contrastive"] = _eval_on_test(ft_res, fold, ft_cfg, ft_cfg.cl_frames)
    confusions["Contrastive"] = outcomes["Contrastive"].confusion
    epochs["Contrastive"] = adapt_res.epochs_run + ft_res.epochs_run
    logs["contrastive_adapt"] = adapt_res.log_rows
    logs["finetune"] = ft_res.log_rows

    byol_cfg = lab.train_config("byol_mixed", seed)
    byol_res = train_byol_mixed(byol_cfg, fold.role_data)
    outcomes["BYOL"] = _eval_on_test(byol_res, fold, byol_cfg, byol_cfg.byol_frames)
    confusions["BYOL"] = outcomes["BYOL"].confusion
    epochs["BYOL"] = byol_res.epochs_run
    logs["byol_mixed"] = byol_res.log_rows

    if out_dir is not None:
        seed_dir = Path(out_dir) / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        for tag, res in (
            ("baseline", base_res),
            ("contrastive_adapt", adapt_res),
            ("finetune", ft_res),
            ("byol_mixed", byol_res),
        ):
            res.checkpoint.config_hash = lab.config_hash
            save_checkpoint(seed_dir / f"{tag}.serk", res.checkpoint)
        for tag, rows in logs.items():
            with open(seed_dir / f"{tag}.log.jsonl", "w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(seed_dir / "reports.json", "w", encoding="utf-8") as fh:
            json.dump(
                {name: rep.to_dict() for name, rep in outcomes.items()},
                fh, indent=2, sort_keys=True,
            )
    return SeedOutcome(seed, fold_session, outcomes, confusions, epochs)


def _run_seed_job(args):
    lab, manifest_path, audio_root, seed, fold_session, out_dir, limit_threads = args
    if limit_threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            return run_seed(lab, manifest_path, audio_root, seed, fold_session, out_dir)
    return run_seed(lab, manifest_path, audio_root, seed, fold_session, out_dir)


@dataclass
class ExperimentBundle:
    outcomes: list[SeedOutcome]
    aggregate: dict[str, EvalReport]
    table_text: str
    delta: np.ndarray
    delta_text: str
    gender_text: dict[str, str]


def reproduce_experiment(lab: LabConfig, manifest_path, audio_root, out_dir) -> ExperimentBundle:
    """Run every (seed, fold) slot, aggregate mean/std, and write the bundle.

    Seed i is paired with session fold i mod n_sessions; slots run in
    parallel up to the SER_LAB_THREADS/CPU cap.
    """
    out_dir = Path(out_dir)
    run_dir = out_dir / lab.config_hash
    run_dir.mkdir(parents=True, exist_ok=True)
    records = read_manifest(manifest_path)
    sessions = sorted({r.session for r in records})
    if len(sessions) < lab.n_folds:
        raise ExperimentError(f"{len(sessions)} sessions cannot form {lab.n_folds} folds")
    jobs = []
    n_workers = worker_cap(len(lab.seeds))
    for i, seed in enumerate(lab.seeds):
        fold_session = sessions[i % lab.n_folds]
        jobs.append((lab, manifest_path, audio_root, seed, fold_session, run_dir, n_workers > 1))

    if n_workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(n_workers) as pool:
            outcomes = pool.map(_run_seed_job, jobs)
    else:
        outcomes = [_run_seed_job(j) for j in jobs]

    aggregate = {
        name: aggregate_runs([o.reports[name] for o in outcomes]) for name in MODELS
    }
    table_rows = {
        name: {
            metric: (aggregate[name].mean[metric], aggregate[name].std[metric])
            for metric in ("accuracy", "macro_f1", "uar")
        }
        for name in MODELS
    }
    table_text = render_comparison_table(table_rows)
    delta = confusion_delta(
        [o.confusions["Contrastive"] for o in outcomes],
        [o.confusions["Baseline"] for o in outcomes],
    )
    delta_text = render_confusion_delta(delta)
    gender_text = {
        name: render_gender_report(aggregate[name].per_gender_recall, aggregate[name].gender_counts)
        for name in MODELS
    }

    (run_dir / "comparison.txt").write_text(table_text + "\n", encoding="utf-8")
    (run_dir / "confusion_delta.txt").write_text(delta_text + "\n", encoding="utf-8")
    (run_dir / "gender_report.txt").write_text(
        "\n\n".join(f"[{name}]\n{text}" for name, text in gender_text.items()) + "\n",
        encoding="utf-8",
    )
    summary = {
        "config_hash": lab.config_hash,
        "seeds": lab.seeds,
        "folds": {str(o.seed): o.fold_session for o in outcomes},
        "aggregate": {name: rep.to_dict() for name, rep in aggregate.items()},
        "per_seed": {
            str(o.seed): {name: rep.to_dict() for name, rep in o.reports.items()}
            for o in outcomes
        },
        "confusion_delta_contrastive_minus_baseline": delta.tolist(),
    }
    (run_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return ExperimentBundle(outcomes, aggregate, table_text, delta, delta_text, gender_text)
