"""
Metrics, ROC curves and folds
=============================

One-vs-rest ROC curves from a probability matrix, the per-class table,
and stratified cross-validation folds.
"""
import sys
from pathlib import Path

import numpy as np

from spinegrade.evaluation import CLASS_NAMES, kfold, metrics_report, roc_curve
from spinegrade.svg import write_chart

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "evaluation"
out.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(2)
truths = rng.choice(3, size=200, p=[0.6, 0.3, 0.1])
logits = rng.normal(size=(200, 3))
logits[np.arange(200), truths] += 1.5
probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)

rep = metrics_report(probs, truths)
print(f"accuracy {rep.accuracy:.3f}, macro F1 {rep.macro_f1:.3f}, macro AUC {rep.macro_auc:.3f}")
for c, name in enumerate(CLASS_NAMES):
    print(f"{name:>10}: precision {rep.precision[c]:.3f} recall {rep.recall[c]:.3f} "
          f"f1 {rep.f1[c]:.3f} auc {rep.auc[c]:.3f} support {rep.support[c]}")
print("confusion (rows true, cols predicted):")
print(np.array(rep.confusion))

series = {}
for c, name in enumerate(CLASS_NAMES):
    curve = roc_curve(probs, truths, c)
    series[name] = (curve.fpr.tolist(), curve.tpr.tolist())
write_chart(out / "roc.svg", series, title="one-vs-rest ROC", xlabel="FPR", ylabel="TPR",
            y_range=(0.0, 1.0), diagonal=True)

folds = kfold(truths, k=5, seed=0)
for f, idx in enumerate(folds.folds()):
    print(f"fold {f}: {np.bincount(truths[idx], minlength=3)}")
