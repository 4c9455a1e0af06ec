"""Grayscale rasters and the per-image preprocessing steps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import IoFailure, MissingFile, ZeroDimension
from ..rng import SeededRng

_DEGENERATE_STD = 1e-12
# rotated sample coordinates this close to the border are treated as inside
_EDGE_EPS = 1e-9


@dataclass
class ImageBuffer:
    """Grayscale raster.  ``pixels`` has shape ``(height, width)``."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ZeroDimension(f"image must be 2-D and nonempty, got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("image intensities must be finite")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_flat(cls, width, height, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ValueError(f"expected {width * height} pixels, got {values.size}")
        return cls(values.reshape(height, width))

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


@dataclass(frozen=True)
class AugmentConfig:
    rotation_degrees: float = 15.0
    flip_prob: float = 0.5
    brightness_fraction: float = 0.2
    copies_per_image: int = 1

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if self.rotation_degrees < 0:
            raise ValueError("rotation_degrees must be >= 0")
        if not 0.0 <= self.brightness_fraction < 1.0:
            raise ValueError("brightness_fraction must lie in [0, 1)")
        if self.copies_per_image < 0:
            raise ValueError("copies_per_image must be >= 0")


# -- PGM ---------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IoFailure("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm_header(path) -> tuple[int, int]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, "rb") as fh:
        head = fh.read(512)
    tokens, _ = _pgm_tokens(head, 4)
    if tokens[0] != b"P5":
        raise IoFailure(f"{path}: not a binary PGM (P5)")
    return int(tokens[1]), int(tokens[2])


def read_pgm(path) -> ImageBuffer:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    data = path.read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise IoFailure(f"{path}: not a binary PGM (P5)")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise IoFailure(f"{path}: 16-bit PGM is not supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return ImageBuffer(raster.reshape(height, width).astype(np.float64))


def write_pgm(path, img: ImageBuffer):
    """Write an 8-bit P5 file; intensities are rounded and clipped to 0..255."""
    raster = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(raster.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- geometry ----------------------------------------------------------------

def _axis_weights(n_in, n_out):
    """Source indices and fractional offsets for align-corners-false sampling."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    if out_w < 1 or out_h < 1:
        raise ZeroDimension(f"target size {out_w}x{out_h}")
    if (out_w, out_h) == (img.width, img.height):
        return ImageBuffer(img.pixels.copy())
    x = img.pixels
    x0, x1, fx = _axis_weights(img.width, out_w)
    y0, y1, fy = _axis_weights(img.height, out_h)
    # a + f*(b - a) keeps constant rows exactly constant
    top = x[y0][:, x0] + fx * (x[y0][:, x1] - x[y0][:, x0])
    bot = x[y1][:, x0] + fx * (x[y1][:, x1] - x[y1][:, x0])
    out = top + fy[:, None] * (bot - top)
    return ImageBuffer(np.clip(out, x.min(), x.max()))


def normalize_image(img: ImageBuffer) -> tuple[ImageBuffer, NormStats]:
    """Per-image standardisation (X - mean) / std with population std.

    Near-constant images (std below 1e-12) map to zeros and report std 0.
    """
    mu = float(img.pixels.mean())
    sigma = float(img.pixels.std())
    if sigma < _DEGENERATE_STD:
        return ImageBuffer(np.zeros_like(img.pixels)), NormStats(mu, 0.0)
    return ImageBuffer((img.pixels - mu) / sigma), NormStats(mu, sigma)


def rotate(img: ImageBuffer, degrees: float) -> ImageBuffer:
    """Rotate about the image centre; bilinear sampling, zero fill outside."""
    if degrees == 0:
        return ImageBuffer(img.pixels.copy())
    h, w = img.height, img.width
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse map: output pixel -> source location
    sx = cx + c * dx + s * dy
    sy = cy - s * dx + c * dy
    inside = (sx > -_EDGE_EPS) & (sx < w - 1 + _EDGE_EPS) & (sy > -_EDGE_EPS) & (sy < h - 1 + _EDGE_EPS)
    sx = np.clip(sx, 0.0, w - 1)
    sy = np.clip(sy, 0.0, h - 1)
    # snap rounding noise so exact grid hits read a single pixel
    rx, ry = np.rint(sx), np.rint(sy)
    sx = np.where(np.abs(sx - rx) < _EDGE_EPS, rx, sx)
    sy = np.where(np.abs(sy - ry) < _EDGE_EPS, ry, sy)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = sx - x0, sy - y0
    p = img.pixels
    top = p[y0, x0] + fx * (p[y0, x1] - p[y0, x0])
    bot = p[y1, x0] + fx * (p[y1, x1] - p[y1, x0])
    out = np.where(inside, top + fy * (bot - top), 0.0)
    return ImageBuffer(out)


def augment(img: ImageBuffer, cfg: AugmentConfig, rng: SeededRng, force_angle=None) -> ImageBuffer:
    """Rotate, flip, then scale brightness, consuming exactly three draws.

    ``force_angle`` overrides the sampled angle (the draw is still consumed).
    """
    lo, hi = float(img.pixels.min()), float(img.pixels.max())
    r = cfg.rotation_degrees
    angle = rng.uniform_range(-r, r)
    flip = rng.uniform() < cfg.flip_prob
    b = cfg.brightness_fraction
    factor = rng.uniform_range(1.0 - b, 1.0 + b)
    if force_angle is not None:
        angle = force_angle

    out = rotate(img, angle).pixels
    if flip:
        out = out[:, ::-1]
    if factor != 1.0:
        out = out * factor
    return ImageBuffer(np.clip(out, lo, hi))
