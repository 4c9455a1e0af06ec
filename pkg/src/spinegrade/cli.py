"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import pipeline as pl
from .classifier import ModelBundle, save_epoch_csv
from .data import SplitAssignment, stratified_split
from .errors import MissingFile, MissingInputs, SpineGradeError, UsageError
from .refine import RefineReport

log = logging.getLogger("spinegrade")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="run directory (overrides the config)")
    p.add_argument("--smoke", action="store_true", help="restrict the grid to the final hyperparameter values")


def build_parser():
    parser = _Parser(prog="spinegrade", description="Lumbar degeneration severity pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth": "write a synthetic dataset into <out>/dataset",
        "preprocess": "split, resize, normalise and augment images",
        "extract": "run both conv pathways and fit feature statistics",
        "refine": "optimise the feature gates",
        "train": "train the attention head",
        "gridsearch": "sweep the hyperparameter grid",
        "evaluate": "evaluate a bundle on a dataset split",
        "crossval": "stratified k-fold cross-validation",
        "ablate-loss": "focal vs cross-entropy comparison",
        "report": "render SVG charts from the epoch and ROC CSVs",
        "pipeline": "run every stage end to end",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "evaluate":
            p.add_argument("--bundle", help="bundle JSON (default <out>/bundle.json)")
            p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    return parser


def _config(args):
    cfg = pl.RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _load_split(run):
    run.require(run.split, stage="preprocess")
    with open(run.split, encoding="utf-8") as fh:
        return SplitAssignment.from_json(json.load(fh))


def cmd_synth(cfg, run, args):
    if cfg.synth is None:
        raise UsageError("config names an on-disk dataset; nothing to synthesise")
    manifest = pl.make_synth(cfg, run)
    counts = np.bincount(manifest.labels(), minlength=3)
    print(f"wrote {len(manifest.samples)} samples to {run.dataset} "
          f"(NormalMild {counts[0]}, Moderate {counts[1]}, Severe {counts[2]})")


def cmd_preprocess(cfg, run, args):
    manifest = pl.load_dataset(cfg, run)
    split = stratified_split(manifest, cfg.split_ratios, cfg.seed_for(pl._SPLIT))
    pl._dump_json(run.split, split.to_json())
    pre = pl.preprocess(cfg, manifest, split)
    pl.save_preprocessed(run.preprocessed, pre)
    print(f"preprocessed {len(pre.images)} images, {len(pre.aug_images)} augmented copies")


def cmd_extract(cfg, run, args):
    manifest = pl.load_dataset(cfg, run)
    split = _load_split(run)
    run.require(run.preprocessed, stage="preprocess")
    table = pl.extract(cfg, manifest, split, pl.load_preprocessed(run.preprocessed))
    stats = pl.fit_stats(table)
    pl.save_feature_table(run, table, stats)
    print(f"extracted {table.X.shape[0]} feature vectors of dimension {table.X.shape[1]}")


def cmd_refine(cfg, run, args):
    table, stats = pl.load_feature_table(run)
    w, report = pl.run_refine(cfg, pl.stage_data(table, stats))
    report.save(run.refine_report)
    print(f"kept {len(report.surviving_indices)} of {len(w)} dimensions; final objective {report.loss_history[-1]:.6g}")


def _load_refine(run):
    run.require(run.refine_report, stage="refine")
    with open(run.refine_report, encoding="utf-8") as fh:
        return RefineReport.from_json(json.load(fh))


def cmd_train(cfg, run, args):
    table, stats = pl.load_feature_table(run)
    report = _load_refine(run)
    bundle, history = pl.run_train(cfg, pl.stage_data(table, stats), report.w, report.config.drop_threshold)
    pl.complete_bundle(cfg, bundle, stats, report)
    bundle.save(run.bundle)
    save_epoch_csv(run.epochs, history)
    last = history[-1]
    print(f"epoch {last.epoch}: val_loss {last.val_loss:.4f} val_accuracy {last.val_accuracy:.4f}")


def cmd_gridsearch(cfg, run, args):
    result = pl.run_gridsearch(cfg, run, smoke=args.smoke)
    print(f"{len(result.leaderboard)} grid points; best {result.best}")


def cmd_evaluate(cfg, run, args):
    path = args.bundle or run.bundle
    try:
        bundle = ModelBundle.load(path)
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    manifest = pl.load_dataset(cfg, run)
    split = _load_split(run)
    probs, labels, ns = pl.evaluate_bundle(bundle, manifest, getattr(split, args.split))
    report = pl.write_metrics(run, bundle, probs, labels)
    pl._dump_json(run.timing, {
        "split": args.split,
        "mean_inference_ns_per_image": ns,
        "note": "desk-scale CPU timing of this implementation; not comparable to published GPU/CPU figures",
    })
    print(f"{args.split}: accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f}, "
          f"macro AUC {report.macro_auc:.4f}; mean inference {ns / 1e6:.3f} ms/image")


def cmd_crossval(cfg, run, args):
    summary = pl.run_crossval(cfg, run)
    print(f"{summary['k']}-fold mean accuracy {summary['mean_accuracy']:.4f}")


def cmd_ablate(cfg, run, args):
    result = pl.run_ablation(cfg, run)
    for r in result.rows:
        print(f"{r['loss']:>12}: precision {r['precision']:.3f} recall {r['recall']:.3f} f1 {r['f1']:.3f} "
              f"accuracy {r['accuracy']:.3f} auc {r['auc']:.3f}")
    print(f"minority-class recall delta (focal - CE): {result.minority_recall_delta:+.4f}")


def cmd_report(cfg, run, args):
    written = pl.write_charts(run)
    print(f"wrote {len(written)} charts to {run.charts}")


def cmd_pipeline(cfg, run, args):
    result = pl.run_pipeline(cfg, run.root)
    print(f"test accuracy {result.report.accuracy:.4f}, macro F1 {result.report.macro_f1:.4f}")


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "extract": cmd_extract, "refine": cmd_refine,
    "train": cmd_train, "gridsearch": cmd_gridsearch, "evaluate": cmd_evaluate, "crossval": cmd_crossval,
    "ablate-loss": cmd_ablate, "report": cmd_report, "pipeline": cmd_pipeline,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        run = pl.RunDir(cfg.out)
        COMMANDS[args.command](cfg, run, args)
    except SpineGradeError as exc:
        print(f"spinegrade {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"spinegrade {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"spinegrade {args.command}: bad input: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
