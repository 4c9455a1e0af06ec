"""Synthetic stand-in datasets with a controllable class skew.

Each image is noisy background plus a Gaussian blob at the annotated
coordinate; blob width and contrast grow with severity, so the classes are
separable after per-image normalisation.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..errors import IoFailure
from ..rng import SeededRng, derive_seed
from .images import ImageBuffer, write_pgm
from .manifest import (Condition, DatasetManifest, PatientMetadata, Plane, SampleRecord,
                       SeriesDescription, Severity, Sex, VertebralLevel, Weighting,
                       write_manifest)

# Normal/Mild, Moderate, Severe image counts 7050 / 2280 / 670
CLASS_PROPORTIONS = (0.705, 0.228, 0.067)

_BASE_INTENSITY = (70.0, 90.0, 110.0)
_NOISE_STD = 10.0


def largest_remainder(n, proportions):
    """Integer counts summing to ``n``; leftover units go to the largest remainders."""
    quotas = [n * p for p in proportions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _blob_image(rng, severity, w, h, separation):
    k = severity - 1
    scale = min(w, h) / 16.0
    sigma = (1.6 + 0.8 * separation * k) * scale
    amp = 70.0 + 30.0 * separation * k
    cx = rng.uniform_range(0.3 * (w - 1), 0.7 * (w - 1))
    cy = rng.uniform_range(0.3 * (h - 1), 0.7 * (h - 1))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    blob = amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))
    noise = _NOISE_STD * rng.normals(w * h).reshape(h, w)
    pixels = np.clip(_BASE_INTENSITY[severity] + blob + noise, 0.0, 255.0)
    return ImageBuffer(pixels), (round(cx, 3), round(cy, 3))


def synth_dataset(n_samples, class_proportions=CLASS_PROPORTIONS, image_dims=(16, 16), seed=0,
                  out_dir="synth", separation=1.0) -> DatasetManifest:
    """Write images plus train/coords/series/patients CSVs under ``out_dir``."""
    if len(class_proportions) != 3 or abs(sum(class_proportions) - 1.0) > 1e-6:
        raise ValueError(f"class proportions must be three values summing to 1, got {class_proportions}")
    w, h = image_dims
    out_dir = Path(out_dir)
    image_root = out_dir / "images"
    try:
        image_root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {image_root}: {exc}") from exc

    counts = largest_remainder(n_samples, class_proportions)
    labels = np.repeat(np.arange(3), counts)
    labels = labels[SeededRng(seed).permutation(n_samples)]

    conditions, levels = list(Condition), list(VertebralLevel)
    samples, series, patients = [], {}, {}
    for i, sev in enumerate(labels):
        rng = SeededRng(derive_seed(seed, i))
        study, series_id = str(10000 + i), str(200000 + i)
        condition = conditions[int(rng.uniform() * len(conditions))]
        level = levels[int(rng.uniform() * len(levels))]
        plane = Plane.Sagittal if rng.uniform() < 0.5 else Plane.Axial
        weighting = Weighting.T2 if rng.uniform() < 0.5 else Weighting.T1
        age = round(rng.uniform_range(20.0, 85.0), 1)
        sex = Sex.F if rng.uniform() < 0.5 else Sex.M
        img, coord = _blob_image(rng, int(sev), w, h, separation)
        record = SampleRecord(study, series_id, "1", condition, level, Severity(int(sev)), coord)
        samples.append(record)
        series[series_id] = SeriesDescription(series_id, plane, weighting)
        patients[study] = PatientMetadata(age, sex)
        write_pgm(image_root / f"{record.key}.pgm", img)

    manifest = DatasetManifest(samples, series, patients, image_root)
    try:
        write_manifest(manifest, out_dir)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return manifest
