"""Dual-pathway convolutional feature extraction.

Two small seeded conv stacks replace the pretrained backbones: a
fine-detail pathway and a compound-scaled one (wider channels, scaled
depth, resampled input).  Both end in global average pooling; their
outputs are concatenated with the metadata encoding and standardised with
statistics fitted on the training split.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data.images import ImageBuffer, resize_bilinear
from .errors import (DimMismatch, InputTooSmall, KernelLargerThanInput, ShapeUnderflow,
                     TooFewVectors)
from .rng import SeededRng, derive_seed

_DEGENERATE_STD = 1e-12


def conv2d(x, kernel, bias=0.0):
    """Valid 2-D convolution (cross-correlation form), stride 1.

    ``y[i, j] = sum_m sum_n x[i+m, j+n] * kernel[m, n] + bias``, accumulated
    with m outer, n inner, bias last, so it matches a naive loop bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    M, N = k.shape
    H, W = x.shape
    if M > H or N > W:
        raise KernelLargerThanInput(f"kernel {M}x{N} larger than input {H}x{W}")
    oh, ow = H - M + 1, W - N + 1
    acc = np.zeros((oh, ow))
    for m in range(M):
        for n in range(N):
            acc += x[m:m + oh, n:n + ow] * k[m, n]
    return acc + bias


def conv_layer(fmap, weights, bias):
    """Multi-channel valid convolution.

    fmap: (C, H, W); weights: (O, C, M, N); bias: (O,) -> (O, H-M+1, W-N+1)
    """
    _, M, N = weights.shape[1:]
    H, W = fmap.shape[1:]
    if M > H or N > W:
        raise KernelLargerThanInput(f"kernel {M}x{N} larger than input {H}x{W}")
    windows = sliding_window_view(fmap, (M, N), axis=(1, 2))  # (C, oh, ow, M, N)
    out = np.einsum("chwmn,ocmn->ohw", windows, weights, optimize=True)
    return out + bias[:, None, None]


def relu(fmap):
    return np.maximum(fmap, 0.0)


def maxpool(fmap, pool=2):
    """Non-overlapping max pooling; trailing odd rows/cols are dropped.

    Accepts (H, W) or (C, H, W).
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    H, W = fmap.shape[-2:]
    if H < pool or W < pool:
        raise InputTooSmall(f"{H}x{W} map cannot be pooled by {pool}")
    oh, ow = H // pool, W // pool
    cropped = fmap[..., :oh * pool, :ow * pool]
    blocks = cropped.reshape(*fmap.shape[:-2], oh, pool, ow, pool)
    return blocks.max(axis=(-3, -1))


def global_avg_pool(fmap):
    """Spatial mean per channel: (C, H, W) -> (C,)."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 2:
        fmap = fmap[None]
    return fmap.mean(axis=(1, 2))


@dataclass
class ConvLayer:
    out_channels: int
    kernel_size: int = 3
    pool: bool = True
    # explicit (O, C, M, N) weights and (O,) bias; drawn from the seed when None
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None


@dataclass
class PathwayConfig:
    layers: list = field(default_factory=lambda: [ConvLayer(8), ConvLayer(16)])
    width_scale: float = 1.0
    depth_scale: float = 1.0
    resolution_scale: float = 1.0
    seed: int = 0
    apply_relu: bool = True

    def __post_init__(self):
        if min(self.width_scale, self.depth_scale, self.resolution_scale) <= 0:
            raise ValueError("pathway scales must be positive")

    def to_json(self):
        return {
            "layers": [{"out_channels": l.out_channels, "kernel_size": l.kernel_size, "pool": l.pool}
                       for l in self.layers],
            "width_scale": self.width_scale,
            "depth_scale": self.depth_scale,
            "resolution_scale": self.resolution_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        layers = [ConvLayer(**l) for l in obj.pop("layers")] if "layers" in obj else None
        cfg = cls(**obj)
        if layers is not None:
            cfg.layers = layers
        return cfg


def fine_detail_config(seed=0) -> PathwayConfig:
    return PathwayConfig(seed=seed)


def scaled_config(seed=1) -> PathwayConfig:
    return PathwayConfig(width_scale=1.5, depth_scale=1.0, resolution_scale=0.5, seed=seed)


def scaled_layers(cfg: PathwayConfig) -> list:
    """Apply width and depth scaling to the layer template.

    Extra depth repeats the last template layer; removed depth drops from
    the end.
    """
    n = max(1, int(round(len(cfg.layers) * cfg.depth_scale)))
    template = [cfg.layers[min(i, len(cfg.layers) - 1)] for i in range(n)]
    out = []
    for layer in template:
        ch = int(round(layer.out_channels * cfg.width_scale))
        if ch < 1:
            raise ShapeUnderflow("width scaling leaves a layer with no channels")
        out.append(replace(layer, out_channels=ch))
    return out


def pathway_shapes(height, width, layers):
    """Spatial size after each layer; raises ShapeUnderflow if it collapses."""
    shapes = []
    for li, layer in enumerate(layers):
        k = layer.kernel_size
        if height < k or width < k:
            raise ShapeUnderflow(f"layer {li}: {height}x{width} input smaller than {k}x{k} kernel")
        height, width = height - k + 1, width - k + 1
        if layer.pool:
            if height < 2 or width < 2:
                raise ShapeUnderflow(f"layer {li}: {height}x{width} map too small to pool")
            height, width = height // 2, width // 2
        shapes.append((height, width))
    return shapes


class Pathway:
    """A materialised pathway: concrete weights plus the input resolution."""

    def __init__(self, cfg: PathwayConfig, in_channels=1):
        self.cfg = cfg
        scaled = cfg.width_scale != 1.0 or cfg.depth_scale != 1.0
        self.layers = scaled_layers(cfg) if scaled else list(cfg.layers)
        self.params = []
        c = in_channels
        for li, layer in enumerate(self.layers):
            k = layer.kernel_size
            if layer.weights is not None and not scaled:
                w = np.asarray(layer.weights, dtype=np.float64).reshape(layer.out_channels, c, k, k)
                b = np.zeros(layer.out_channels) if layer.bias is None else np.asarray(layer.bias, float)
            else:
                fan_in = c * k * k
                limit = math.sqrt(6.0 / fan_in)
                rng = SeededRng(derive_seed(cfg.seed, li))
                u = rng.uniforms(layer.out_channels * fan_in)
                w = ((2.0 * u - 1.0) * limit).reshape(layer.out_channels, c, k, k)
                b = np.zeros(layer.out_channels)
            self.params.append((w, b, layer.pool))
            c = layer.out_channels

    @property
    def out_dim(self):
        return self.layers[-1].out_channels

    def input_size(self, width, height):
        r = self.cfg.resolution_scale
        return max(1, int(round(width * r))), max(1, int(round(height * r)))

    def check(self, width, height):
        w, h = self.input_size(width, height)
        return pathway_shapes(h, w, self.layers)

    def __call__(self, img: ImageBuffer) -> np.ndarray:
        w, h = self.input_size(img.width, img.height)
        self.check(img.width, img.height)
        if (w, h) != (img.width, img.height):
            img = resize_bilinear(img, w, h)
        fmap = img.pixels[None]
        for weights, bias, pool in self.params:
            fmap = conv_layer(fmap, weights, bias)
            if self.cfg.apply_relu:
                fmap = relu(fmap)
            if pool:
                fmap = maxpool(fmap)
        return global_avg_pool(fmap)


def build_pathway(cfg: PathwayConfig) -> Pathway:
    return Pathway(cfg)


def run_pathway(img: ImageBuffer, cfg: PathwayConfig) -> np.ndarray:
    return Pathway(cfg)(img)


def concat_features(a, b, meta):
    """Fine-detail, scaled, metadata, in that order."""
    return np.concatenate([np.asarray(a, float).ravel(), np.asarray(b, float).ravel(),
                           np.asarray(meta, float).ravel()])


@dataclass
class FeatureNormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_json(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["std"], dtype=np.float64))


def fit_feature_stats(train_features: Sequence) -> FeatureNormStats:
    """Population mean/std per dimension over the training vectors."""
    if len(train_features) < 2:
        raise TooFewVectors(f"need at least 2 vectors, got {len(train_features)}")
    dims = {np.asarray(f).shape for f in train_features}
    if len(dims) != 1:
        raise DimMismatch(f"feature vectors have differing shapes {sorted(dims)}")
    X = np.asarray(train_features, dtype=np.float64)
    return FeatureNormStats(X.mean(axis=0), X.std(axis=0))


def apply_feature_norm(f, stats: FeatureNormStats):
    """Standardise a vector or a (n, d) matrix; zero-variance dims map to 0."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != stats.mean.shape[0]:
        raise DimMismatch(f"feature dim {f.shape[-1]} != stats dim {stats.mean.shape[0]}")
    live = stats.std >= _DEGENERATE_STD
    safe = np.where(live, stats.std, 1.0)
    return np.where(live, (f - stats.mean) / safe, 0.0)


def save_features_csv(path, keys, features):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        d = np.asarray(features).shape[1] if len(keys) else 0
        w.writerow(["key"] + [f"f{i}" for i in range(d)])
        for key, row in zip(keys, features):
            w.writerow([key] + ["%.17g" % v for v in row])


def load_features_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    keys = [r[0] for r in rows[1:]]
    X = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return keys, X


def save_stats_json(path, stats: FeatureNormStats):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stats.to_json(), fh, indent=1)
