import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spinegrade.data import (AugmentConfig, ImageBuffer, augment, normalize_image, read_pgm, read_pgm_header,
                             resize_bilinear, write_pgm)
from spinegrade.errors import MissingFile, ZeroDimension
from spinegrade.data.images import rotate
from spinegrade.rng import SeededRng


def bilinear_oracle(pixels, out_w, out_h):
    """Per-pixel align-corners-false bilinear sampling written as a plain loop."""
    h, w = pixels.shape
    out = np.zeros((out_h, out_w))
    for j in range(out_h):
        for i in range(out_w):
            sx = min(max((i + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            sy = min(max((j + 0.5) * h / out_h - 0.5, 0.0), h - 1)
            x0, y0 = int(math.floor(sx)), int(math.floor(sy))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            ax, ay = sx - x0, sy - y0
            out[j, i] = ((1 - ax) * (1 - ay) * pixels[y0, x0] + ax * (1 - ay) * pixels[y0, x1]
                         + (1 - ax) * ay * pixels[y1, x0] + ax * ay * pixels[y1, x1])
    return out


pixel_arrays = st.tuples(st.integers(1, 7), st.integers(1, 7)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(0, 255, allow_nan=False)))


def test_pgm_round_trip(tmp_path):
    px = np.arange(12, dtype=float).reshape(3, 4) * 20
    write_pgm(tmp_path / "a.pgm", ImageBuffer(px))
    assert read_pgm_header(tmp_path / "a.pgm") == (4, 3)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm").pixels, px)


def test_pgm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# comment\n2 1\n255\n\x05\x07")
    assert read_pgm(p).pixels.tolist() == [[5.0, 7.0]]


def test_pgm_missing(tmp_path):
    with pytest.raises(MissingFile):
        read_pgm(tmp_path / "nope.pgm")


def test_zero_dimension_rejected():
    with pytest.raises(ZeroDimension):
        ImageBuffer(np.zeros((0, 3)))
    with pytest.raises(ZeroDimension):
        resize_bilinear(ImageBuffer(np.ones((2, 2))), 0, 3)


def test_resize_identity_returns_copy():
    img = ImageBuffer(np.arange(6.0).reshape(2, 3))
    out = resize_bilinear(img, 3, 2)
    assert np.array_equal(out.pixels, img.pixels)
    assert out.pixels is not img.pixels


def test_resize_2x2_to_4x4_hand_values():
    # hand-computed: source coordinates per axis are 0, 0.25, 0.75, 1
    img = ImageBuffer(np.array([[0.0, 10.0], [20.0, 30.0]]))
    expected = np.array([
        [0.0, 2.5, 7.5, 10.0],
        [5.0, 7.5, 12.5, 15.0],
        [15.0, 17.5, 22.5, 25.0],
        [20.0, 22.5, 27.5, 30.0],
    ])
    out = resize_bilinear(img, 4, 4).pixels
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(out, bilinear_oracle(img.pixels, 4, 4), atol=1e-12)


@given(pixel_arrays, st.integers(1, 9), st.integers(1, 9))
def test_resize_matches_loop_oracle_and_range(px, ow, oh):
    out = resize_bilinear(ImageBuffer(px), ow, oh).pixels
    assert out.shape == (oh, ow)
    assert np.allclose(out, bilinear_oracle(px, ow, oh), atol=1e-9)
    assert out.min() >= px.min() and out.max() <= px.max()


@given(st.floats(0, 255), st.integers(1, 6), st.integers(1, 6), st.integers(1, 9), st.integers(1, 9))
def test_resize_constant_stays_constant(v, w, h, ow, oh):
    out = resize_bilinear(ImageBuffer(np.full((h, w), v)), ow, oh).pixels
    assert np.all(out == v)


def test_normalize_hand_values():
    vals = [0.0, 128.0, 255.0]
    out, stats = normalize_image(ImageBuffer(np.array([vals])))
    mu, sd = statistics.fmean(vals), statistics.pstdev(vals)
    assert stats.mean == pytest.approx(mu, abs=1e-12)
    assert stats.std == pytest.approx(sd, abs=1e-12)
    assert np.allclose(out.pixels[0], [(v - mu) / sd for v in vals], atol=1e-12)


def test_normalize_constant_image():
    out, stats = normalize_image(ImageBuffer(np.full((3, 3), 42.0)))
    assert np.all(out.pixels == 0) and stats.std == 0.0 and stats.mean == 42.0


@given(pixel_arrays)
def test_normalize_properties(px):
    out, stats = normalize_image(ImageBuffer(px))
    if stats.std == 0.0:
        assert np.all(out.pixels == 0)
        return
    assert abs(out.pixels.mean()) < 1e-9
    assert abs(out.pixels.std() - 1.0) < 1e-9
    again, s2 = normalize_image(out)
    assert np.allclose(again.pixels, out.pixels, atol=1e-9)
    assert s2.std == pytest.approx(1.0, abs=1e-9)


def test_augment_identity_config():
    px = np.arange(20.0).reshape(4, 5)
    cfg = AugmentConfig(rotation_degrees=0, flip_prob=0, brightness_fraction=0)
    assert np.array_equal(augment(ImageBuffer(px), cfg, SeededRng(1)).pixels, px)


def test_augment_always_flip():
    cfg = AugmentConfig(rotation_degrees=0, flip_prob=1, brightness_fraction=0)
    out = augment(ImageBuffer(np.array([[1.0, 2.0], [3.0, 4.0]])), cfg, SeededRng(5))
    assert out.pixels.tolist() == [[2.0, 1.0], [4.0, 3.0]]


def test_augment_consumes_three_draws():
    rng, ref = SeededRng(11), SeededRng(11)
    augment(ImageBuffer(np.ones((3, 3))), AugmentConfig(), rng)
    for _ in range(3):
        ref.next_u64()
    assert rng.state == ref.state


def test_forced_quarter_turn_on_constant_image():
    cfg = AugmentConfig(rotation_degrees=0, flip_prob=0, brightness_fraction=0)
    out = augment(ImageBuffer(np.full((5, 5), 9.0)), cfg, SeededRng(0), force_angle=90.0)
    assert np.all(out.pixels == 9.0)


def test_quarter_turn_permutes_pixels():
    px = np.arange(9.0).reshape(3, 3)
    out = rotate(ImageBuffer(px), 90.0).pixels
    assert sorted(out.ravel().tolist()) == sorted(px.ravel().tolist())
    assert out[1, 1] == 4.0


@settings(max_examples=50)
@given(pixel_arrays, st.integers(0, 2**32))
def test_augment_preserves_shape_and_range(px, seed):
    out = augment(ImageBuffer(px), AugmentConfig(), SeededRng(seed)).pixels
    assert out.shape == px.shape
    assert out.min() >= px.min() and out.max() <= px.max()
