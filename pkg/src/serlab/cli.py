"""Command-line entry point binding the lab together.

Exit codes: 0 success, 1 validation error (flags, config, data contracts),
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns exit codes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="serlab", description="Cross-lingual speech emotion transfer lab")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-synth", parents=[], help="generate the synthetic corpus",
                       description="Generate the deterministic synthetic two-domain corpus.")
    p.add_argument("--config", help="lab config JSON (corpus section)")
    p.add_argument("--out", required=True, help="output directory for audio + manifest")
    p.add_argument("--seed", type=int, help="override the corpus seed")

    p = sub.add_parser("prepare", help="normalize labels and filter durations",
                       description="Clean a manifest: map raw labels, drop out-of-range durations.")
    p.add_argument("--manifest", required=True, help="input manifest (JSON-lines)")
    p.add_argument("--out", required=True, help="output manifest path")
    p.add_argument("--label-map", help="JSON file mapping raw labels to the four classes or DROP")
    p.add_argument("--min-s", type=float, default=0.5, help="minimum duration, seconds")
    p.add_argument("--max-s", type=float, default=12.0, help="maximum duration, seconds")

    p = sub.add_parser("train", help="train one model",
                       description="Train one recipe on a fold of the corpus.")
    p.add_argument("--mode", required=True,
                   choices=["baseline", "contrastive_adapt", "finetune", "byol_mixed"])
    p.add_argument("--config", help="lab config JSON")
    p.add_argument("--manifest", required=True, help="corpus manifest")
    p.add_argument("--audio-root", help="audio root (default: manifest directory)")
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.add_argument("--fold", help="held-out session (default: first session)")
    p.add_argument("--init", help="stage-1 checkpoint for finetune")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint",
                       description="Zero-shot evaluation of a checkpoint on manifest records.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="", help="comma-separated key=value filters "
                                               "(language, session, split, emotion, gender)")
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("confusion-delta", help="confusion difference of two models",
                       description="Entrywise mean confusion difference, model A minus model B.")
    p.add_argument("--summary", required=True, help="summary.json from a sweep run")
    p.add_argument("--model-a", default="Contrastive")
    p.add_argument("--model-b", default="Baseline")
    p.add_argument("--out", required=True, help="output text path")

    p = sub.add_parser("export-embeddings", help="dump embeddings as CSV",
                       description="Eval-mode embeddings for external 2-D projection.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="", help="comma-separated key=value filters")
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("augment-preview", help="write before/after spectrograms",
                       description="Render one sample's views as binary spectrogram matrices.")
    p.add_argument("--wav", required=True)
    p.add_argument("--pipeline", default="cl_adapt",
                   choices=["cl_adapt", "byol_ssl", "byol_supervised", "baseline"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=400)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="full multi-seed comparison",
                       description="Run baseline, contrastive, and mixed training over paired "
                                   "(seed, fold) slots and aggregate the comparison bundle.")
    p.add_argument("--config", help="lab config JSON")
    p.add_argument("--seeds", help="comma-separated seed list (overrides config)")
    p.add_argument("--manifest", help="existing corpus manifest (generated under --out if absent)")
    p.add_argument("--out", required=True, help="output directory")

    return parser


def _load_lab(config_path):
    from serlab.config import load_config, parse_config

    if config_path:
        return load_config(config_path)
    return parse_config({})


def _parse_filters(spec: str) -> dict:
    filters = {}
    if not spec:
        return filters
    allowed = ("language", "session", "split", "emotion", "gender")
    for part in spec.split(","):
        if "=" not in part:
            raise CliValidationError(f"bad --split filter {part!r}; expected key=value")
        key, value = part.split("=", 1)
        if key not in allowed:
            raise CliValidationError(f"unknown --split key {key!r}; expected one of {allowed}")
        filters[key] = value
    return filters


def _filtered_records(manifest_path, filters: dict):
    from serlab.manifest import read_manifest

    records = read_manifest(manifest_path)
    for key, value in filters.items():
        records = [r for r in records if getattr(r, key) == value]
    if not records:
        raise CliValidationError(f"no records match filters {filters}")
    return records


def _cmd_gen_synth(args) -> int:
    import dataclasses

    from serlab.synth import generate_synth_corpus

    lab = _load_lab(args.config)
    corpus = lab.corpus
    if args.seed is not None:
        corpus = dataclasses.replace(corpus, seed=args.seed)
    manifest = generate_synth_corpus(corpus, args.out)
    print(f"wrote {manifest}")
    return 0


def _cmd_prepare(args) -> int:
    from serlab.manifest import (
        DEFAULT_LABEL_MAP,
        filter_duration,
        normalize_labels,
        read_manifest,
        write_manifest,
    )

    records = read_manifest(args.manifest)
    table = dict(DEFAULT_LABEL_MAP)
    if args.label_map:
        table.update(json.loads(Path(args.label_map).read_text(encoding="utf-8")))
    normalized = normalize_labels(records, table)
    kept = filter_duration(normalized, args.min_s, args.max_s)
    write_manifest(args.out, kept)
    print(f"{len(records)} records in, {len(normalized)} after label mapping, {len(kept)} kept")
    return 0


def _fold_data(lab, manifest_path, audio_root, fold):
    from serlab.experiment import split_fold
    from serlab.manifest import read_manifest

    records = read_manifest(manifest_path)
    sessions = sorted({r.session for r in records})
    fold_session = fold or sessions[0]
    hrl_tag, lrl_tag = (lang.tag for lang in lab.corpus.languages[:2])
    return split_fold(records, fold_session, hrl_tag, lrl_tag, audio_root)


def _cmd_train(args) -> int:
    from serlab.checkpoint import load_checkpoint, save_checkpoint
    from serlab.pipelines import train, train_finetune

    lab = _load_lab(args.config)
    audio_root = args.audio_root or str(Path(args.manifest).parent)
    fold = _fold_data(lab, args.manifest, audio_root, args.fold)
    config = lab.train_config(args.mode, args.seed)
    if args.mode == "finetune":
        init = load_checkpoint(args.init) if args.init else None
        result = train_finetune(config, fold.role_data, init)
    else:
        result = train(config, fold.role_data)
    run_dir = Path(args.out) / lab.config_hash / f"seed{args.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    result.checkpoint.config_hash = lab.config_hash
    ckpt_path = run_dir / f"{args.mode}.serk"
    save_checkpoint(ckpt_path, result.checkpoint)
    with open(run_dir / f"{args.mode}.log.jsonl", "w", encoding="utf-8") as fh:
        for row in result.log_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {ckpt_path} (best epoch {result.best_epoch}, "
          f"metric {result.checkpoint.best_metric:.4f})")
    return 0


def _eval_pipeline(lab, manifest_path):
    from serlab.features import FeaturePipeline
    from serlab.rng import RngStream

    return FeaturePipeline(
        Path(manifest_path).parent, lab.augment, RngStream(0).split("cli_eval"), 400, 300
    )


def _cmd_eval(args) -> int:
    from serlab.checkpoint import load_checkpoint
    from serlab.evaluate import render_comparison_table, report_to_json
    from serlab.pipelines import evaluate_checkpoint

    lab = _load_lab(None)
    ckpt = load_checkpoint(args.checkpoint)
    records = [
        r for r in _filtered_records(args.manifest, _parse_filters(args.split))
        if r.emotion is not None
    ]
    if not records:
        raise CliValidationError("no labeled records to evaluate")
    pipeline = _eval_pipeline(lab, args.manifest)
    report = evaluate_checkpoint(ckpt, pipeline, records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_to_json(report) + "\n", encoding="utf-8")
    table = render_comparison_table(
        {ckpt.mode or "model": {m: (getattr(report, m), None) for m in ("accuracy", "macro_f1", "uar")}}
    )
    print(table)
    print(f"wrote {out}")
    return 0


def _cmd_confusion_delta(args) -> int:
    from serlab.evaluate import confusion_delta, render_confusion_delta

    summary = json.loads(Path(args.summary).read_text(encoding="utf-8"))
    per_seed = summary.get("per_seed", {})
    if not per_seed:
        raise CliValidationError(f"{args.summary} has no per_seed reports")
    try:
        a = [seed[args.model_a]["confusion"] for seed in per_seed.values()]
        b = [seed[args.model_b]["confusion"] for seed in per_seed.values()]
    except KeyError as exc:
        raise CliValidationError(f"model {exc.args[0]!r} not present in summary") from exc
    delta = confusion_delta(a, b)
    text = render_confusion_delta(delta)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_export_embeddings(args) -> int:
    from serlab.checkpoint import load_checkpoint
    from serlab.evaluate import export_embeddings
    from serlab.model import EncoderConfig
    from serlab.pipelines import _inference_store, predict_records

    lab = _load_lab(None)
    ckpt = load_checkpoint(args.checkpoint)
    records = _filtered_records(args.manifest, _parse_filters(args.split))
    pipeline = _eval_pipeline(lab, args.manifest)
    enc_cfg = EncoderConfig.from_dict(ckpt.encoder_config)
    embeddings, _ = predict_records(
        _inference_store(ckpt), enc_cfg, pipeline, records, enc_cfg.max_frames
    )
    export_embeddings(records, embeddings, args.out)
    print(f"wrote {args.out} ({len(records)} rows x {embeddings.shape[1]} dims)")
    return 0


def _cmd_augment_preview(args) -> int:
    from serlab.augment import make_views
    from serlab.dsp import crop_or_pad, load_audio, log_mel, write_spec_matrix
    from serlab.rng import RngStream

    lab = _load_lab(None)
    clip = load_audio(args.wav)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = crop_or_pad(log_mel(clip), args.frames, train_mode=False)
    write_spec_matrix(out / "before.smel", base.values)
    item = clip if args.pipeline in ("cl_adapt", "baseline") else base
    views = make_views(
        item, args.pipeline, lab.augment, RngStream(args.seed).split("preview"), args.frames
    )
    for i, view in enumerate(views):
        write_spec_matrix(out / f"after_{i}.smel", view.values)
    print(f"wrote {out}/before.smel and {len(views)} view(s)")
    return 0


def _cmd_sweep(args) -> int:
    from serlab.experiment import reproduce_experiment
    from serlab.synth import generate_synth_corpus

    lab = _load_lab(args.config)
    if args.seeds:
        lab.seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    if args.manifest:
        manifest = Path(args.manifest)
        audio_root = manifest.parent
    else:
        corpus_dir = out / "corpus"
        manifest = corpus_dir / "manifest.jsonl"
        if not manifest.exists():
            print("generating synthetic corpus ...")
            manifest = generate_synth_corpus(lab.corpus, corpus_dir)
        audio_root = corpus_dir
    bundle = reproduce_experiment(lab, manifest, audio_root, out)
    print(bundle.table_text)
    print()
    print(bundle.delta_text)
    print()
    for name, text in bundle.gender_text.items():
        print(f"[{name}]")
        print(text)
    print(f"\nbundle under {out / lab.config_hash}")
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "confusion-delta": _cmd_confusion_delta,
    "export-embeddings": _cmd_export_embeddings,
    "augment-preview": _cmd_augment_preview,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        return _COMMANDS[args.command](args)
    except (CliValidationError, ValueError) as exc:
        # the lab's contract-violation errors all derive from ValueError
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected failure
        traceback.print_exc()
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
