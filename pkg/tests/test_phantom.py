"""Phantom generator determinism and anatomy invariants."""

import numpy as np
import pytest

from spineseg.errors import GenerationError
from spineseg.phantom import generate_phantom, label_centroids


def test_same_seed_bit_identical():
    a = generate_phantom(42)
    b = generate_phantom(42)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.meta == b.meta


def test_different_seeds_differ():
    a = generate_phantom(1)
    b = generate_phantom(2)
    assert not np.array_equal(a.labels, b.labels)


def test_every_label_has_enough_voxels():
    for seed in range(12):
        s = generate_phantom(seed, patch_size=(32, 32, 32), n_vertebrae=4)
        counts = np.bincount(s.labels.reshape(-1), minlength=5)
        assert all(counts[1:5] >= 32), counts


def test_labels_in_range_and_image_bounded():
    s = generate_phantom(7)
    assert s.labels.min() >= 0 and s.labels.max() <= 4
    assert np.isfinite(s.image).all()
    assert s.image.min() >= 0.0 and s.image.max() <= 1.0
    assert s.image.shape == (1, 32, 32, 32)
    assert s.labels.dtype == np.int32


def test_centroids_ordered_along_stack_axis():
    for seed in range(8):
        s = generate_phantom(seed, n_vertebrae=4)
        cent = label_centroids(s.labels, 4, axis=0)
        assert np.all(np.isfinite(cent))
        assert np.all(np.diff(cent) > 0), cent


def test_too_many_vertebrae_raises():
    with pytest.raises(GenerationError):
        generate_phantom(0, patch_size=(16, 16, 16), n_vertebrae=8)


def test_anisotropic_patch():
    s = generate_phantom(3, patch_size=(16, 32, 32), n_vertebrae=3)
    assert s.image.shape == (1, 16, 32, 32)
    counts = np.bincount(s.labels.reshape(-1), minlength=4)
    assert all(counts[1:4] > 0)
