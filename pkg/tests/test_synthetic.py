"""Synthetic digit corpus: determinism, balance, value range, IDX round trip."""

import numpy as np

from sae.store import load_dataset
from sae.synthetic import synthetic_digits, write_idx_pair


def test_corpus_is_deterministic():
    a = synthetic_digits(60, seed=3)
    b = synthetic_digits(60, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    c = synthetic_digits(60, seed=4)
    assert not np.array_equal(a.images, c.images)


def test_corpus_shape_range_and_balance():
    data = synthetic_digits(50, seed=0)
    assert data.images.shape == (50, 28, 28, 1)
    assert data.images.dtype == np.float32
    assert data.images.min() >= 0.0 and data.images.max() <= 1.0
    assert data.class_count == 10
    counts = np.bincount(data.labels, minlength=10)
    assert counts.tolist() == [5] * 10
    np.testing.assert_array_equal(data.labels, np.arange(50) % 10)


def test_corpus_classes_are_separable_by_centroids():
    # nearest-centroid is translation/rotation sensitive, so this is only a
    # degenerate-glyph guard; it must still beat chance by a wide margin
    train = synthetic_digits(400, seed=1)
    test = synthetic_digits(100, seed=2)
    centroids = np.stack(
        [train.images[train.labels == c].mean(axis=0).ravel() for c in range(10)]
    )
    flat = test.images.reshape(len(test), -1)
    d2 = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predicted = d2.argmin(axis=1)
    assert (predicted == test.labels).mean() >= 0.5


def test_corpus_round_trips_through_idx(tmp_path):
    data = synthetic_digits(20, seed=5)
    write_idx_pair(data, tmp_path / "img.idx", tmp_path / "lab.idx")
    back = load_dataset(tmp_path / "img.idx", tmp_path / "lab.idx", fmt="idx", class_count=10)
    assert back.images.shape == data.images.shape
    np.testing.assert_array_equal(back.labels, data.labels)
    # uint8 quantization: at most half a grey level of error
    assert np.abs(back.images - data.images).max() <= 0.5 / 255.0 + 1e-7
