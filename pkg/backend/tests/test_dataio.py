import gzip
import struct

import numpy as np
import pytest

from app.exceptions import BadMagicError, DataError, IdxFormatError, SplitError, TruncatedFileError
from app.models.dataset import Dataset, EqualRandom, RatioRandom, WithFlip
from app.services.dataio import (
    apportion,
    flip_count,
    flip_indices,
    flip_labels,
    load_idx,
    split,
    subsample,
    synthetic_dataset,
    write_idx,
)


def _labeled(n, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(images=rng.integers(0, 256, size=(n, 4)) / 255.0, labels=rng.integers(0, 10, size=n))


# --- IDX ---

def test_idx_round_trip(tmp_path, toy_train):
    write_idx(toy_train, tmp_path / "img", tmp_path / "lbl")
    loaded = load_idx(tmp_path / "img", tmp_path / "lbl")
    np.testing.assert_array_equal(loaded.images, toy_train.images)
    np.testing.assert_array_equal(loaded.labels, toy_train.labels)
    assert struct.unpack(">IIII", (tmp_path / "img").read_bytes()[:16]) == (0x803, 600, 8, 8)


def test_idx_reads_gzip(tmp_path, toy_test):
    write_idx(toy_test, tmp_path / "img", tmp_path / "lbl")
    for name in ("img", "lbl"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    loaded = load_idx(tmp_path / "img.gz", tmp_path / "lbl.gz")
    np.testing.assert_array_equal(loaded.labels, toy_test.labels)


def test_idx_bad_magic(tmp_path, toy_test):
    write_idx(toy_test, tmp_path / "img", tmp_path / "lbl")
    with pytest.raises(BadMagicError):
        load_idx(tmp_path / "lbl", tmp_path / "lbl")


def test_idx_truncated(tmp_path, toy_test):
    write_idx(toy_test, tmp_path / "img", tmp_path / "lbl")
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "img").write_bytes(raw[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_count_mismatch_and_label_range(tmp_path, toy_test):
    write_idx(toy_test, tmp_path / "img", tmp_path / "lbl")
    (tmp_path / "short").write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 2, 3]))
    with pytest.raises(IdxFormatError):
        load_idx(tmp_path / "img", tmp_path / "short")

    one = toy_test.take(np.arange(2), "two rows")
    write_idx(one, tmp_path / "img2", tmp_path / "lbl2")
    (tmp_path / "lbl2").write_bytes(struct.pack(">II", 0x801, 2) + bytes([1, 12]))
    with pytest.raises(IdxFormatError):
        load_idx(tmp_path / "img2", tmp_path / "lbl2")


def test_write_idx_refuses_lossy_pixels(tmp_path):
    data = Dataset(images=np.full((2, 4), 0.3333), labels=[1, 2])
    with pytest.raises(DataError):
        write_idx(data, tmp_path / "img", tmp_path / "lbl")


# --- splitting ---

def test_apportion_largest_remainder():
    assert apportion(60000, [6, 5, 4, 3, 2, 1]) == [17143, 14286, 11429, 8571, 5714, 2857]
    assert apportion(60000, [1] * 6) == [10000] * 6
    assert apportion(10, [1, 1, 1]) == [4, 3, 3]
    assert apportion(12000, [2, 1, 1]) == [6000, 3000, 3000]


def test_split_is_a_seeded_partition():
    data = _labeled(1000)
    parts = split(data, RatioRandom(ratios=(2, 1, 1)), seed=5)
    assert [len(p) for p in parts] == [500, 250, 250]
    np.testing.assert_array_equal(np.sort(np.concatenate([p.index for p in parts])), np.arange(1000))
    for p in parts:
        np.testing.assert_array_equal(p.labels, data.labels[p.index])

    again = split(data, RatioRandom(ratios=(2, 1, 1)), seed=5)
    other = split(data, RatioRandom(ratios=(2, 1, 1)), seed=6)
    np.testing.assert_array_equal(again[0].index, parts[0].index)
    assert not np.array_equal(other[0].index, parts[0].index)


def test_split_rejects_too_few_samples():
    with pytest.raises(SplitError):
        split(_labeled(3), EqualRandom(n_clients=4), seed=0)
    with pytest.raises(SplitError):
        split(Dataset(images=np.zeros((0, 4)), labels=[]), EqualRandom(n_clients=2), seed=0)


def test_split_with_flip_only_touches_flipped_clients():
    data = _labeled(600)
    plain = split(data, EqualRandom(n_clients=3), seed=1)
    flipped = split(data, WithFlip(base=EqualRandom(n_clients=3), flip_probs=(0.0, 0.0, 1.0)), seed=1)
    np.testing.assert_array_equal(plain[0].labels, flipped[0].labels)
    np.testing.assert_array_equal(plain[2].images, flipped[2].images)
    assert not np.array_equal(plain[2].labels, flipped[2].labels)


def test_subsample_size_and_order():
    data = _labeled(1000)
    sub = subsample(data, 0.25, seed=3)
    assert len(sub) == 250
    assert np.all(np.diff(sub.index) > 0)


# --- label flipping ---

def test_flip_count_rounds_half_up():
    assert flip_count(3, 0.5) == 2
    assert flip_count(10, 0.25) == 3
    assert flip_count(100, 0.0) == 0


def test_flip_zero_is_identity():
    data = _labeled(50)
    assert flip_labels(data, 0.0, seed=1) is data


def test_flip_touches_exactly_the_drawn_rows():
    data = _labeled(500)
    out = flip_labels(data, 0.3, seed=9)
    rows = flip_indices(len(data), 0.3, seed=9)
    assert len(rows) == 150 and len(set(rows.tolist())) == 150
    untouched = np.setdiff1d(np.arange(500), rows)
    np.testing.assert_array_equal(out.labels[untouched], data.labels[untouched])
    np.testing.assert_array_equal(out.images, data.images)


@pytest.mark.parametrize("p,seed", [(0.1, 0), (0.5, 3), (0.9, 17), (1.0, 5)])
def test_changed_labels_lie_in_the_drawn_rows(p, seed):
    data = _labeled(400)
    changed = np.flatnonzero(flip_labels(data, p, seed=seed).labels != data.labels)
    rows = flip_indices(len(data), p, seed=seed)
    assert set(changed.tolist()) <= set(rows.tolist())
    assert len(changed) > 0.6 * len(rows)


def test_flip_indices_rejects_bad_proportions():
    with pytest.raises(ValueError):
        flip_indices(10, -0.1, seed=0)


def test_flip_changes_about_nine_tenths_of_redrawn_labels():
    data = _labeled(10000)
    out = flip_labels(data, 0.5, seed=2)
    changed = int(np.sum(out.labels != data.labels))
    # 5000 redraws, each lands on a different class with probability 0.9
    assert abs(changed - 4500) < 150


def test_flip_rejects_bad_proportions():
    with pytest.raises(ValueError):
        flip_labels(_labeled(10), 1.5, seed=0)


def test_synthetic_sets_share_prototypes():
    a, b = synthetic_dataset(100, seed=1), synthetic_dataset(100, seed=2)
    assert a.n_features == b.n_features == 64
    assert not np.array_equal(a.labels, b.labels)
