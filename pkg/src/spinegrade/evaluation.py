"""Classification metrics, ROC analysis, stratified folds and the loss ablation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMatrix, InsufficientClassSamples, LengthMismatch, SingleClassOnly
from .rng import SeededRng, derive_seed

N_CLASSES = 3
CLASS_NAMES = ("NormalMild", "Moderate", "Severe")


def confusion(preds, truths, n_classes=N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if preds.shape != truths.shape or preds.size == 0:
        raise LengthMismatch(f"{preds.size} predictions vs {truths.size} labels")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truths, preds), 1)
    return cm


def class_metrics(cm, cls):
    """One-vs-rest precision, recall and F1 for ``cls``.

    Returns ``(precision, recall, f1, zero_division)``; any 0/0 ratio is
    reported as 0 and flagged.
    """
    cm = np.asarray(cm)
    tp = cm[cls, cls]
    fp = cm[:, cls].sum() - tp
    fn = cm[cls, :].sum() - tp
    zero_div = False
    if tp + fp == 0:
        precision, zero_div = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, zero_div = 0.0, True
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return float(precision), float(recall), float(f1), zero_div


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return float(np.trace(cm) / total)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_curve(scores, truths, cls) -> RocCurve:
    """One-vs-rest ROC from a descending sweep over the distinct scores.

    ``scores`` is either the positive-class score per sample or the full
    (n, n_classes) probability matrix.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2:
        scores = scores[:, cls]
    pos = np.asarray(truths).ravel() == cls
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassOnly(f"class {cls} needs positive and negative samples")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(p)[ends]
    fps = (ends + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return RocCurve(fpr, tpr, np.r_[np.inf, s[ends]])


def roc_auc(scores, truths, cls):
    """``(RocCurve, auc)`` with trapezoidal integration (ties count one half)."""
    curve = roc_curve(scores, truths, cls)
    auc = float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))
    return curve, auc


@dataclass
class FoldAssignment:
    k: int
    fold_of: np.ndarray

    def folds(self):
        return [np.flatnonzero(self.fold_of == f) for f in range(self.k)]


def kfold(labels, k=5, seed=0) -> FoldAssignment:
    """Stratified folds: each class is shuffled and dealt round-robin.

    The dealing offset carries over between classes so fold sizes stay
    balanced overall as well as per class.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1:
        raise ValueError("k must be >= 1")
    fold_of = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise InsufficientClassSamples(f"class {c} has {idx.size} samples for {k} folds")
        perm = idx[SeededRng(derive_seed(seed, int(c))).permutation(idx.size)]
        fold_of[perm] = (np.arange(idx.size) + offset) % k
        offset = (offset + idx.size) % k
    return FoldAssignment(k, fold_of)


@dataclass
class MetricsReport:
    accuracy: float
    precision: list
    recall: list
    f1: list
    support: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    auc: list
    macro_auc: float
    mean_loss: float
    confusion: list
    zero_division: list = field(default_factory=list)

    def to_json(self):
        return {
            "accuracy": self.accuracy,
            "per_class": [
                {"class": CLASS_NAMES[c], "precision": self.precision[c], "recall": self.recall[c],
                 "f1": self.f1[c], "support": self.support[c], "auc": self.auc[c]}
                for c in range(N_CLASSES)
            ],
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall,
                      "f1": self.macro_f1, "auc": self.macro_auc},
            "mean_loss": self.mean_loss,
            "confusion": self.confusion,
            "zero_division": self.zero_division,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def save_class_table(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "precision", "recall", "f1", "support"])
            for c in range(N_CLASSES):
                w.writerow([CLASS_NAMES[c], repr(self.precision[c]), repr(self.recall[c]), repr(self.f1[c]),
                            self.support[c]])


def metrics_report(probs, truths, mean_loss=float("nan")) -> MetricsReport:
    """Full report from an (n, 3) probability matrix.

    Classes without both positives and negatives get AUC NaN and are left
    out of the macro AUC.
    """
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    preds = np.argmax(probs, axis=1)
    cm = confusion(preds, truths)
    per = [class_metrics(cm, c) for c in range(N_CLASSES)]
    aucs = []
    for c in range(N_CLASSES):
        try:
            aucs.append(roc_auc(probs, truths, c)[1])
        except SingleClassOnly:
            aucs.append(float("nan"))
    finite = [a for a in aucs if np.isfinite(a)]
    return MetricsReport(
        accuracy=accuracy(cm),
        precision=[m[0] for m in per],
        recall=[m[1] for m in per],
        f1=[m[2] for m in per],
        support=[int(s) for s in cm.sum(axis=1)],
        macro_precision=float(np.mean([m[0] for m in per])),
        macro_recall=float(np.mean([m[1] for m in per])),
        macro_f1=float(np.mean([m[2] for m in per])),
        auc=aucs,
        macro_auc=float(np.mean(finite)) if finite else float("nan"),
        mean_loss=float(mean_loss),
        confusion=cm.tolist(),
        zero_division=[CLASS_NAMES[c] for c in range(N_CLASSES) if per[c][3]],
    )


def save_roc_csv(path, probs, truths):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "fpr", "tpr"])
        for c in range(N_CLASSES):
            try:
                curve = roc_curve(probs, truths, c)
            except SingleClassOnly:
                continue
            for x, y in zip(curve.fpr, curve.tpr):
                w.writerow([CLASS_NAMES[c], repr(float(x)), repr(float(y))])


# -- focal vs cross-entropy ------------------------------------------------------

ABLATION_COLUMNS = ["loss", "precision", "recall", "f1", "accuracy", "auc"]


@dataclass
class AblationResult:
    rows: list  # one dict per loss, values are medians over seeds
    minority_recall: dict  # loss name -> per-seed recall of the minority class
    minority_class: int

    @property
    def minority_recall_delta(self):
        return float(np.median(self.minority_recall["Focal"]) - np.median(self.minority_recall["CrossEntropy"]))

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ABLATION_COLUMNS)
            for r in self.rows:
                w.writerow([r["loss"]] + [repr(float(r[c])) for c in ABLATION_COLUMNS[1:]])


def ablate_loss(train_X, train_y, eval_X, eval_y, base_cfg=None, focal=None, seeds=(0, 1, 2, 3, 4),
                val_X=None, val_y=None):
    """Train cross-entropy and focal heads with identical seeds and compare.

    Table rows are medians over ``seeds`` of the macro precision, recall,
    F1, accuracy and AUC on the evaluation split.  The per-seed recall of
    the rarest training class is kept for the directional comparison.
    """
    from .classifier import FocalLossConfig, LossKind, TrainConfig, forward, train

    base_cfg = base_cfg or TrainConfig()
    focal = focal or FocalLossConfig()
    train_y = np.asarray(train_y)
    eval_y = np.asarray(eval_y)
    if val_X is None:
        val_X, val_y = eval_X, eval_y
    minority = int(np.argmin(np.bincount(train_y, minlength=N_CLASSES)))
    rows, minority_recall = [], {}
    for kind in (LossKind.CrossEntropy, LossKind.Focal):
        per_seed = []
        for seed in seeds:
            cfg = type(base_cfg)(**{**base_cfg.to_json(), "loss": kind.value, "seed": int(seed)})
            bundle, _ = train(train_X, train_y, val_X, val_y, cfg, focal)
            P = forward(eval_X, bundle.attention, bundle.classifier)
            per_seed.append(metrics_report(P, eval_y))
        minority_recall[kind.value] = [r.recall[minority] for r in per_seed]
        rows.append({
            "loss": kind.value,
            "precision": float(np.median([r.macro_precision for r in per_seed])),
            "recall": float(np.median([r.macro_recall for r in per_seed])),
            "f1": float(np.median([r.macro_f1 for r in per_seed])),
            "accuracy": float(np.median([r.accuracy for r in per_seed])),
            "auc": float(np.median([r.macro_auc for r in per_seed])),
        })
    return AblationResult(rows, minority_recall, minority)
