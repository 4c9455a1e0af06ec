"""End-to-end orchestration: dataset -> preprocessing -> features -> refinement
-> attention head -> evaluation, with every intermediate written to a run
directory."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .classifier import (FocalLossConfig, GridSpec, ModelBundle, TrainConfig, forward, grid_search,
                         save_epoch_csv, save_leaderboard, train)
from .data import (AugmentConfig, DatasetManifest, SplitAssignment, augment, extract_metadata,
                   load_manifest, normalize_image, read_pgm, resize_bilinear, stratified_split,
                   synth_dataset)
from .data.synth import CLASS_PROPORTIONS
from .errors import MissingInputs, UsageError
from .evaluation import CLASS_NAMES, ablate_loss, kfold, metrics_report, save_roc_csv
from .features import (FeatureNormStats, Pathway, PathwayConfig, apply_feature_norm, concat_features,
                       fine_detail_config, fit_feature_stats, load_features_csv, save_features_csv,
                       save_stats_json, scaled_config)
from .refine import RefineConfig, RefineReport, refine, sparse_transform
from .rng import SeededRng, derive_seed
from .svg import write_chart

log = logging.getLogger(__name__)

ARTIFACT_VERSION = "1"

# stream ids for seeds derived from the master seed
_SPLIT, _AUGMENT, _REFINE, _TRAIN, _FINE, _SCALED, _FOLDS = range(1, 8)

DEFAULT_SYNTH = {"n_samples": 300, "class_proportions": list(CLASS_PROPORTIONS), "image_dims": [16, 16],
                 "separation": 1.0}


@dataclass
class RunConfig:
    """Run configuration; an empty JSON object selects every default.

    Exactly one of ``dataset`` (manifest paths) or ``synth`` may be given;
    with neither, a default synthetic dataset is generated.
    """

    dataset: Optional[dict] = None
    synth: Optional[dict] = None
    image_size: tuple = (32, 32)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    fine_pathway: PathwayConfig = field(default_factory=fine_detail_config)
    scaled_pathway: PathwayConfig = field(default_factory=scaled_config)
    refine: RefineConfig = field(default_factory=RefineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    focal: FocalLossConfig = field(default_factory=FocalLossConfig)
    grid: Optional[GridSpec] = None
    split_ratios: tuple = (0.8, 0.1, 0.1)
    kfold: int = 5
    seed: int = 0
    out: str = "run"

    def __post_init__(self):
        if self.dataset is not None and self.synth is not None:
            raise UsageError("config may name a dataset or a synth spec, not both")
        if self.dataset is None and self.synth is None:
            self.synth = dict(DEFAULT_SYNTH)
        else:
            self.synth = None if self.synth is None else {**DEFAULT_SYNTH, **self.synth}

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        for key in ("dataset", "synth", "kfold", "seed", "out"):
            if key in obj:
                kw[key] = obj[key]
        if "image_size" in obj:
            kw["image_size"] = tuple(obj["image_size"])
        if "split_ratios" in obj:
            kw["split_ratios"] = tuple(obj["split_ratios"])
        try:
            if "augment" in obj:
                kw["augment"] = AugmentConfig(**obj["augment"])
            if "fine_pathway" in obj:
                kw["fine_pathway"] = PathwayConfig.from_json({**fine_detail_config().to_json(), **obj["fine_pathway"]})
            if "scaled_pathway" in obj:
                kw["scaled_pathway"] = PathwayConfig.from_json({**scaled_config().to_json(), **obj["scaled_pathway"]})
            if "refine" in obj:
                kw["refine"] = RefineConfig(**obj["refine"])
            if "train" in obj:
                kw["train"] = TrainConfig(**obj["train"])
            if "focal" in obj:
                kw["focal"] = FocalLossConfig(**obj["focal"])
            if obj.get("grid") is not None:
                kw["grid"] = GridSpec(obj["grid"].get("axes", obj["grid"]))
        except TypeError as exc:
            raise UsageError(f"bad config: {exc}") from None
        return cls(**kw)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise UsageError(f"config file {path} not found")
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_json(json.load(fh))
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}: {exc}") from None

    def to_json(self):
        return {
            "dataset": self.dataset,
            "synth": self.synth,
            "image_size": list(self.image_size),
            "augment": asdict(self.augment),
            "fine_pathway": self.fine_pathway.to_json(),
            "scaled_pathway": self.scaled_pathway.to_json(),
            "refine": self.refine.to_json(),
            "train": self.train.to_json(),
            "focal": {"gamma": self.focal.gamma, "alpha": self.focal.alpha},
            "grid": None if self.grid is None else {"axes": self.grid.axes},
            "split_ratios": list(self.split_ratios),
            "kfold": self.kfold,
            "seed": self.seed,
            "out": self.out,
        }

    def config_hash(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    # derived per-stage settings
    def seed_for(self, stream):
        return derive_seed(self.seed, stream)

    def train_config(self):
        return TrainConfig(**{**self.train.to_json(), "seed": self.seed_for(_TRAIN)})

    def pathways(self):
        fine = PathwayConfig.from_json({**self.fine_pathway.to_json(), "seed": self.seed_for(_FINE)})
        scaled = PathwayConfig.from_json({**self.scaled_pathway.to_json(), "seed": self.seed_for(_SCALED)})
        return Pathway(fine), Pathway(scaled)


class RunDir:
    """Fixed file layout of a run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.written = []

    def __getattr__(self, name):
        names = {
            "dataset": "dataset", "split": "split.json", "preprocessed": "preprocessed.npz",
            "features": "features.csv", "feature_index": "feature_index.json",
            "feature_stats": "feature_stats.json", "refine_report": "refine_report.json",
            "bundle": "bundle.json", "epochs": "epochs.csv", "metrics": "metrics.json",
            "per_class": "per_class.csv", "roc": "roc.csv", "charts": "charts",
            "leaderboard": "leaderboard.csv", "best_bundle": "bundle_best.json",
            "crossval": "crossval.json", "ablation": "ablation.csv", "ablation_json": "ablation.json",
            "timing": "eval_timing.json", "manifest": "run_manifest.json",
        }
        if name not in names:
            raise AttributeError(name)
        return self.root / names[name]

    def record(self, *paths):
        for p in paths:
            p = Path(p)
            if p not in self.written:
                self.written.append(p)

    def require(self, *paths, stage=""):
        missing = [str(p) for p in paths if not Path(p).exists()]
        if missing:
            raise MissingInputs(f"missing {', '.join(missing)}" + (f"; run `{stage}` first" if stage else ""))


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- stages -------------------------------------------------------------------

def make_synth(cfg: RunConfig, run: RunDir) -> DatasetManifest:
    s = cfg.synth
    seed = s.get("seed", cfg.seed)
    synth_dataset(s["n_samples"], tuple(s["class_proportions"]), tuple(s["image_dims"]), seed, run.dataset,
                  separation=s.get("separation", 1.0))
    run.record(run.dataset)
    return load_dataset(cfg, run)


def load_dataset(cfg: RunConfig, run: RunDir) -> DatasetManifest:
    if cfg.dataset is not None:
        d = cfg.dataset
        return load_manifest(d["train_csv"], d["coords_csv"], d["series_csv"], d["image_root"],
                             d.get("patients_csv"))
    root = run.dataset
    run.require(root / "train.csv", stage="synth")
    return load_manifest(root / "train.csv", root / "coords.csv", root / "series.csv", root / "images",
                         root / "patients.csv")


def prepare_image(path, image_size):
    """Read, resize and standardise one image."""
    img = read_pgm(path)
    img = resize_bilinear(img, image_size[0], image_size[1])
    return normalize_image(img)[0]


@dataclass
class Preprocessed:
    images: np.ndarray  # (n, H, W) for every manifest sample
    aug_images: np.ndarray  # (m, H, W) augmented copies of training images
    aug_source: np.ndarray  # (m,) source sample index


def preprocess(cfg: RunConfig, manifest: DatasetManifest, split: SplitAssignment) -> Preprocessed:
    from .data.images import ImageBuffer

    images = np.stack([prepare_image(manifest.image_path(s), cfg.image_size).pixels
                       for s in manifest.samples])
    aug, src = [], []
    aug_seed = cfg.seed_for(_AUGMENT)
    for i in split.train:
        for copy in range(cfg.augment.copies_per_image):
            rng = SeededRng(derive_seed(aug_seed, int(i), copy))
            aug.append(augment(ImageBuffer(images[i]), cfg.augment, rng).pixels)
            src.append(int(i))
    h, w = cfg.image_size[1], cfg.image_size[0]
    aug_arr = np.stack(aug) if aug else np.zeros((0, h, w))
    return Preprocessed(images, aug_arr, np.asarray(src, dtype=np.int64))


def save_preprocessed(path, pre: Preprocessed):
    np.savez(path, images=pre.images, aug_images=pre.aug_images, aug_source=pre.aug_source)


def load_preprocessed(path) -> Preprocessed:
    with np.load(path) as z:
        return Preprocessed(z["images"], z["aug_images"], z["aug_source"])


@dataclass
class FeatureTable:
    keys: list
    X: np.ndarray  # raw combined features
    labels: np.ndarray
    role: list  # "train" / "validation" / "test" per row
    source: np.ndarray  # manifest sample index per row

    def rows(self, role):
        return np.array([i for i, r in enumerate(self.role) if r == role], dtype=np.int64)

    def originals(self):
        return np.array([i for i, k in enumerate(self.keys) if "~" not in k], dtype=np.int64)


def extract(cfg: RunConfig, manifest: DatasetManifest, split: SplitAssignment, pre: Preprocessed) -> FeatureTable:
    from .data.images import ImageBuffer

    fine, scaled = cfg.pathways()
    meta = [extract_metadata(s, manifest.patients[s.study_id], manifest.series[s.series_id])
            for s in manifest.samples]
    role_of = {}
    for name in ("train", "validation", "test"):
        for i in getattr(split, name):
            role_of[int(i)] = name

    def featurize(pixels, i):
        img = ImageBuffer(pixels)
        return concat_features(fine(img), scaled(img), meta[i])

    keys, rows, labels, roles, source = [], [], [], [], []
    for i, s in enumerate(manifest.samples):
        keys.append(s.key)
        rows.append(featurize(pre.images[i], i))
        labels.append(int(s.severity))
        roles.append(role_of.get(i, "unused"))
        source.append(i)
    counts = {}
    for pixels, i in zip(pre.aug_images, pre.aug_source):
        i = int(i)
        counts[i] = counts.get(i, 0) + 1
        keys.append(f"{manifest.samples[i].key}~aug{counts[i]}")
        rows.append(featurize(pixels, i))
        labels.append(int(manifest.samples[i].severity))
        roles.append("train")
        source.append(i)
    return FeatureTable(keys, np.asarray(rows), np.asarray(labels, dtype=np.int64), roles,
                        np.asarray(source, dtype=np.int64))


def save_feature_table(run: RunDir, table: FeatureTable, stats: FeatureNormStats):
    save_features_csv(run.features, table.keys, table.X)
    _dump_json(run.feature_index, {"labels": table.labels.tolist(), "role": table.role,
                                   "source": table.source.tolist()})
    save_stats_json(run.feature_stats, stats)
    run.record(run.features, run.feature_index, run.feature_stats)


def load_feature_table(run: RunDir):
    run.require(run.features, run.feature_index, run.feature_stats, stage="extract")
    keys, X = load_features_csv(run.features)
    idx = _load_json(run.feature_index)
    stats = FeatureNormStats.from_json(_load_json(run.feature_stats))
    table = FeatureTable(keys, X, np.asarray(idx["labels"], np.int64), idx["role"],
                         np.asarray(idx["source"], np.int64))
    return table, stats


def fit_stats(table: FeatureTable) -> FeatureNormStats:
    return fit_feature_stats(list(table.X[table.rows("train")]))


@dataclass
class StageData:
    """Standardised features split by role."""

    Z: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def stage_data(table: FeatureTable, stats: FeatureNormStats) -> StageData:
    return StageData(apply_feature_norm(table.X, stats), table.labels, table.rows("train"),
                     table.rows("validation"), table.rows("test"))


def run_refine(cfg: RunConfig, data: StageData):
    return refine(data.Z[data.train], data.labels[data.train], cfg.refine, seed=cfg.seed_for(_REFINE))


def run_train(cfg: RunConfig, data: StageData, w, tau):
    R, _ = sparse_transform(data.Z, w, tau)
    return train(R[data.train], data.labels[data.train], R[data.validation], data.labels[data.validation],
                 cfg.train_config(), cfg.focal)


def complete_bundle(cfg: RunConfig, bundle: ModelBundle, stats, report: RefineReport) -> ModelBundle:
    bundle.feature_stats = stats
    bundle.refine_w = report.w
    bundle.surviving_indices = report.surviving_indices
    bundle.tau = report.config.drop_threshold
    fine, scaled = cfg.pathways()
    bundle.extras = {
        "preprocess": {"image_size": list(cfg.image_size)},
        "pathways": {"fine": fine.cfg.to_json(), "scaled": scaled.cfg.to_json()},
    }
    return bundle


def bundle_pathways(bundle: ModelBundle):
    try:
        p = bundle.extras["pathways"]
        size = tuple(bundle.extras["preprocess"]["image_size"])
    except KeyError:
        raise MissingInputs("bundle has no preprocessing/pathway section") from None
    return Pathway(PathwayConfig.from_json(p["fine"])), Pathway(PathwayConfig.from_json(p["scaled"])), size


def evaluate_bundle(bundle: ModelBundle, manifest: DatasetManifest, indices):
    """Image-to-label inference over ``indices``.

    Returns ``(probs, labels, mean_ns_per_image)``; timing covers reading,
    preprocessing, both pathways and the head.
    """
    fine, scaled, size = bundle_pathways(bundle)
    probs, labels, elapsed = [], [], 0
    for i in indices:
        s = manifest.samples[int(i)]
        t0 = time.perf_counter_ns()
        img = prepare_image(manifest.image_path(s), size)
        meta = extract_metadata(s, manifest.patients[s.study_id], manifest.series[s.series_id])
        f = concat_features(fine(img), scaled(img), meta)
        probs.append(bundle.probabilities(f))
        elapsed += time.perf_counter_ns() - t0
        labels.append(int(s.severity))
    n = max(len(labels), 1)
    return np.asarray(probs), np.asarray(labels, dtype=np.int64), elapsed / n


def write_metrics(run: RunDir, bundle: ModelBundle, probs, labels):
    from .classifier import batch_loss

    loss, _ = batch_loss(probs, labels, bundle.train_config.loss, bundle.focal.gamma, bundle.focal.alpha)
    report = metrics_report(probs, labels, loss)
    report.save(run.metrics)
    report.save_class_table(run.per_class)
    save_roc_csv(run.roc, probs, labels)
    run.record(run.metrics, run.per_class, run.roc)
    return report


def write_charts(run: RunDir):
    """One SVG per epoch curve plus one ROC chart per class."""
    run.require(run.epochs, run.roc, stage="train/evaluate")
    with open(run.epochs, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    with open(run.roc, newline="", encoding="utf-8") as fh:
        roc_rows = list(csv.DictReader(fh))
    if not rows or not roc_rows:
        raise MissingInputs("epoch or ROC curve file is empty")
    run.charts.mkdir(exist_ok=True)
    epochs = [int(r["epoch"]) for r in rows]
    written = []
    curves = {
        "loss": {"train": "train_loss", "validation": "val_loss"},
        "accuracy": {"validation": "val_accuracy"},
        "precision": {"validation": "val_precision"},
        "recall": {"validation": "val_recall"},
        "f1": {"validation": "val_f1"},
    }
    for name, cols in curves.items():
        series = {label: (epochs, [float(r[col]) for r in rows]) for label, col in cols.items()}
        path = run.charts / f"{name}.svg"
        write_chart(path, series, title=f"{name} per epoch", xlabel="epoch", ylabel=name)
        written.append(path)
    for cls in CLASS_NAMES:
        pts = [(float(r["fpr"]), float(r["tpr"])) for r in roc_rows if r["class"] == cls]
        if not pts:
            continue
        path = run.charts / f"roc_{cls}.svg"
        write_chart(path, {cls: ([p[0] for p in pts], [p[1] for p in pts])}, title=f"ROC {cls}",
                    xlabel="false positive rate", ylabel="true positive rate", y_range=(0.0, 1.0), diagonal=True)
        written.append(path)
    run.record(*written)
    return written


def write_run_manifest(cfg: RunConfig, run: RunDir, started):
    _dump_json(run.manifest, {
        "config_hash": cfg.config_hash(),
        "artifact_version": ARTIFACT_VERSION,
        "bundle_version": ModelBundle.__dataclass_fields__["version"].default,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": sorted(str(p.relative_to(run.root)) for p in run.written if p.exists()),
    })


def _now():
    return datetime.now(timezone.utc).isoformat()


# -- composite commands -------------------------------------------------------------

@dataclass
class PipelineResult:
    bundle: ModelBundle
    history: list
    report: object
    refine_report: RefineReport
    split: SplitAssignment


def run_pipeline(cfg: RunConfig, out=None) -> PipelineResult:
    started = _now()
    run = RunDir(out or cfg.out)
    manifest = make_synth(cfg, run) if cfg.synth is not None else load_dataset(cfg, run)
    split = stratified_split(manifest, cfg.split_ratios, cfg.seed_for(_SPLIT))
    _dump_json(run.split, split.to_json())
    run.record(run.split)
    log.info("split: %d train, %d validation, %d test", len(split.train), len(split.validation), len(split.test))

    pre = preprocess(cfg, manifest, split)
    table = extract(cfg, manifest, split, pre)
    stats = fit_stats(table)
    save_feature_table(run, table, stats)
    data = stage_data(table, stats)

    w, refine_report = run_refine(cfg, data)
    refine_report.save(run.refine_report)
    run.record(run.refine_report)
    log.info("refinement kept %d of %d dimensions", len(refine_report.surviving_indices), len(w))

    bundle, history = run_train(cfg, data, w, refine_report.config.drop_threshold)
    complete_bundle(cfg, bundle, stats, refine_report)
    bundle.save(run.bundle)
    save_epoch_csv(run.epochs, history)
    run.record(run.bundle, run.epochs)

    probs, labels, _ = evaluate_bundle(bundle, manifest, split.test)
    report = write_metrics(run, bundle, probs, labels)
    write_charts(run)
    write_run_manifest(cfg, run, started)
    return PipelineResult(bundle, history, report, refine_report, split)


def run_gridsearch(cfg: RunConfig, run: RunDir, smoke=False):
    table, stats = load_feature_table(run)
    data = stage_data(table, stats)
    grid = GridSpec.smoke() if smoke else (cfg.grid or GridSpec())
    result = grid_search(grid, data.Z[data.train], data.labels[data.train], data.Z[data.validation],
                         data.labels[data.validation], cfg.refine, cfg.train_config(), cfg.focal,
                         refine_seed=cfg.seed_for(_REFINE))
    save_leaderboard(run.leaderboard, result.leaderboard, grid.names())
    complete_bundle(cfg, result.best_bundle, stats, result.best_refine)
    result.best_bundle.save(run.best_bundle)
    run.record(run.leaderboard, run.best_bundle)
    return result


def run_crossval(cfg: RunConfig, run: RunDir):
    """Stratified k-fold over the original samples (augmented copies follow their source)."""
    table, _ = load_feature_table(run)
    orig = table.originals()
    folds = kfold(table.labels[orig], cfg.kfold, cfg.seed_for(_FOLDS))
    fold_of_source = {int(table.source[r]): int(f) for r, f in zip(orig, folds.fold_of)}
    results = []
    for f in range(cfg.kfold):
        held = np.array([r for r in orig if fold_of_source[int(table.source[r])] == f])
        fit_rows = np.array([r for r in range(len(table.keys)) if fold_of_source[int(table.source[r])] != f])
        stats = fit_feature_stats(list(table.X[fit_rows]))
        Z = apply_feature_norm(table.X, stats)
        w, rep = refine(Z[fit_rows], table.labels[fit_rows], cfg.refine, seed=cfg.seed_for(_REFINE))
        R, _ = sparse_transform(Z, w, rep.config.drop_threshold)
        bundle, _ = train(R[fit_rows], table.labels[fit_rows], R[held], table.labels[held], cfg.train_config(),
                          cfg.focal)
        P = forward(R[held], bundle.attention, bundle.classifier)
        rpt = metrics_report(P, table.labels[held])
        results.append({"fold": f, "n": int(held.size), "accuracy": rpt.accuracy, "macro_f1": rpt.macro_f1,
                        "macro_auc": rpt.macro_auc})
    summary = {
        "k": cfg.kfold,
        "folds": results,
        "mean_accuracy": float(np.mean([r["accuracy"] for r in results])),
        "mean_macro_f1": float(np.mean([r["macro_f1"] for r in results])),
    }
    _dump_json(run.crossval, summary)
    run.record(run.crossval)
    return summary


def run_ablation(cfg: RunConfig, run: RunDir, seeds=(0, 1, 2, 3, 4)):
    table, stats = load_feature_table(run)
    data = stage_data(table, stats)
    if run.refine_report.exists():
        rep = RefineReport.from_json(_load_json(run.refine_report))
        w, tau = rep.w, rep.config.drop_threshold
    else:
        w, rep = run_refine(cfg, data)
        tau = rep.config.drop_threshold
    R, _ = sparse_transform(data.Z, w, tau)
    result = ablate_loss(R[data.train], data.labels[data.train], R[data.test], data.labels[data.test],
                         cfg.train_config(), cfg.focal, seeds, R[data.validation], data.labels[data.validation])
    result.save_csv(run.ablation)
    _dump_json(run.ablation_json, {"minority_class": CLASS_NAMES[result.minority_class],
                                   "minority_recall": result.minority_recall,
                                   "minority_recall_delta": result.minority_recall_delta})
    run.record(run.ablation, run.ablation_json)
    return result
