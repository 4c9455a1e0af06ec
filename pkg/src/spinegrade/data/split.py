"""Seeded stratified train/validation/test partitioning."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientClassSamples
from ..rng import SeededRng, derive_seed
from .manifest import DatasetManifest

MIN_CLASS_SAMPLES = 3


@dataclass
class SplitAssignment:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def to_json(self):
        return {name: getattr(self, name).tolist() for name in ("train", "validation", "test")}

    @classmethod
    def from_json(cls, obj):
        return cls(*(np.asarray(obj[k], dtype=np.int64) for k in ("train", "validation", "test")))


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(data, ratios=(0.8, 0.1, 0.1), seed=0) -> SplitAssignment:
    """Split sample indices per class.

    ``data`` is a :class:`DatasetManifest` or a sequence of integer labels.
    Validation and test sizes are rounded per class; train takes the rest.
    """
    labels = data.labels() if isinstance(data, DatasetManifest) else np.asarray(data, dtype=np.int64)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    parts = {"train": [], "validation": [], "test": []}
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n = idx.size
        if n < MIN_CLASS_SAMPLES:
            raise InsufficientClassSamples(f"class {c} has {n} samples, need {MIN_CLASS_SAMPLES}")
        perm = idx[SeededRng(derive_seed(seed, int(c))).permutation(n)]
        n_test = _round_half_up(n * ratios[2])
        n_val = _round_half_up(n * ratios[1])
        parts["test"].append(perm[:n_test])
        parts["validation"].append(perm[n_test:n_test + n_val])
        parts["train"].append(perm[n_test + n_val:])
    out = {k: np.sort(np.concatenate(v)) if v else np.zeros(0, dtype=np.int64) for k, v in parts.items()}
    return SplitAssignment(out["train"], out["validation"], out["test"])
