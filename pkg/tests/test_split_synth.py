import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinegrade.data import CLASS_PROPORTIONS, largest_remainder, stratified_split, synth_dataset
from spinegrade.data.split import SplitAssignment
from spinegrade.errors import InsufficientClassSamples


def _labels(counts):
    return np.repeat(np.arange(len(counts)), counts)


def test_split_sizes_per_class():
    labels = _labels([70, 20, 10])
    s = stratified_split(labels, (0.8, 0.1, 0.1), seed=4)
    per = {name: np.bincount(labels[getattr(s, name)], minlength=3).tolist()
           for name in ("train", "validation", "test")}
    assert per == {"train": [56, 16, 8], "validation": [7, 2, 1], "test": [7, 2, 1]}


def test_split_rejects_tiny_class():
    with pytest.raises(InsufficientClassSamples):
        stratified_split(_labels([10, 2, 5]))


def test_split_deterministic_and_seed_sensitive():
    labels = _labels([30, 30, 30])
    a, b = stratified_split(labels, seed=1), stratified_split(labels, seed=1)
    assert a.to_json() == b.to_json()
    assert a.to_json() != stratified_split(labels, seed=2).to_json()
    assert SplitAssignment.from_json(a.to_json()).to_json() == a.to_json()


@settings(max_examples=60)
@given(st.lists(st.integers(3, 40), min_size=1, max_size=3), st.integers(0, 10**6))
def test_split_is_a_partition(counts, seed):
    labels = _labels(counts)
    s = stratified_split(labels, seed=seed)
    joined = np.concatenate([s.train, s.validation, s.test])
    assert sorted(joined.tolist()) == list(range(labels.size))
    for c in range(len(counts)):
        assert np.any(labels[s.train] == c)


def test_largest_remainder_counts():
    assert largest_remainder(1000, CLASS_PROPORTIONS) == [705, 228, 67]
    assert largest_remainder(3, (1 / 3, 1 / 3, 1 / 3)) == [1, 1, 1]
    # 10 * (.705, .228, .067) = 7.05, 2.28, 0.67 -> the leftover unit goes to the 0.67 remainder
    assert largest_remainder(10, CLASS_PROPORTIONS) == [7, 2, 1]


def test_synth_counts_and_files(tmp_path):
    m = synth_dataset(1000, CLASS_PROPORTIONS, seed=3, out_dir=tmp_path / "d")
    assert np.bincount(m.labels()).tolist() == [705, 228, 67]
    assert len(list((tmp_path / "d" / "images").glob("*.pgm"))) == 1000
    for name in ("train.csv", "coords.csv", "series.csv", "patients.csv"):
        assert (tmp_path / "d" / name).exists()


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_byte_identical(tmp_path):
    synth_dataset(30, seed=9, out_dir=tmp_path / "a")
    synth_dataset(30, seed=9, out_dir=tmp_path / "b")
    synth_dataset(30, seed=10, out_dir=tmp_path / "c")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_synth_reloads(tmp_path):
    from spinegrade.data import load_manifest
    m = synth_dataset(12, (1 / 3, 1 / 3, 1 / 3), image_dims=(10, 8), seed=0, out_dir=tmp_path)
    again = load_manifest(tmp_path / "train.csv", tmp_path / "coords.csv", tmp_path / "series.csv",
                          tmp_path / "images")
    assert again.samples == m.samples


def test_synth_three_samples_one_per_class(tmp_path):
    m = synth_dataset(3, (1 / 3, 1 / 3, 1 / 3), seed=0, out_dir=tmp_path)
    assert sorted(m.labels().tolist()) == [0, 1, 2]
