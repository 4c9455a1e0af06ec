"""
Preprocessing a synthetic study
===============================

Generate a small imbalanced dataset, then walk one image through the
per-image steps: bilinear resize, standardisation and a seeded augmentation.
"""
import sys
from pathlib import Path

import numpy as np

from spinegrade.data import (AugmentConfig, CLASS_PROPORTIONS, augment, normalize_image, read_pgm,
                             resize_bilinear, stratified_split, synth_dataset, write_pgm)
from spinegrade.rng import SeededRng

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "preprocessing"
out.mkdir(parents=True, exist_ok=True)

# 90 samples drawn with the default severity proportions
manifest = synth_dataset(90, CLASS_PROPORTIONS, image_dims=(16, 16), seed=0, out_dir=out / "dataset")
print("class counts:", np.bincount(manifest.labels()))

# the split is stratified, so every class appears in each part
split = stratified_split(manifest, (0.8, 0.1, 0.1), seed=0)
print("train / validation / test sizes:", len(split.train), len(split.validation), len(split.test))

img = read_pgm(manifest.image_path(manifest.samples[0]))
big = resize_bilinear(img, 32, 32)
z, stats = normalize_image(big)
print(f"raw range [{img.pixels.min():.0f}, {img.pixels.max():.0f}], mean {stats.mean:.2f}, std {stats.std:.2f}")
print(f"standardised mean {z.pixels.mean():.2e}, std {z.pixels.std():.6f}")

# three augmented copies from independent child seeds
cfg = AugmentConfig()
for k in range(3):
    aug = augment(big, cfg, SeededRng(k))
    write_pgm(out / f"augmented_{k}.pgm", aug)
    print(f"copy {k}: mean intensity {aug.pixels.mean():.2f}")
