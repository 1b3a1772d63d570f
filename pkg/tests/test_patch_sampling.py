import math

import numpy as np
import pytest

from Errors import ConfigError, ShapeError
from PatchSampling import (PatchSpec, assemble, axis_positions, centered_patches, extract_patches,
                           patch_count, patch_positions, patch_rng, remove_patch_means)


def brute_positions(length, window, stride):
    last = length - window
    return sorted(set(range(0, last + 1, stride)) | {last})


class TestGeometry:
    def test_axis_positions_exhaustive(self):
        for length in range(1, 41):
            for window in range(1, length + 1, 2):
                for stride in range(1, length + 1):
                    expected = brute_positions(length, window, stride)
                    assert axis_positions(length, window, stride) == expected
                    assert len(expected) == math.ceil((length - window) / stride) + 1

    def test_patch_count_matches_positions(self):
        for m in range(1, 41, 3):
            for n in range(1, 41, 4):
                for k1 in range(1, m + 1, 2):
                    for k2 in range(1, n + 1, 4):
                        for k in (1, 2, 3, 5):
                            spec = PatchSpec(k1, k2, k)
                            positions = patch_positions(m, n, spec)
                            assert len(positions) == patch_count(m, n, spec)
                            assert positions == sorted(positions)

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            axis_positions(4, 5, 1)

    def test_spec_problems(self):
        assert PatchSpec(7, 7, 1).problems() == []
        assert PatchSpec(4, 7).problems()
        assert PatchSpec(7, 7, 0).problems()
        with pytest.raises(ConfigError):
            PatchSpec(2, 3).validate()


class TestExtraction:
    def test_columns_are_row_major_patches(self, rng):
        img = rng.random((9, 8))
        spec = PatchSpec(3, 5, 2)
        pm = extract_patches(img, spec)
        positions = patch_positions(9, 8, spec)
        assert pm.shape == (15, len(positions))
        for j, (r, c) in enumerate(positions):
            np.testing.assert_array_equal(pm[:, j], img[r:r + 3, c:c + 5].ravel())

    def test_mnist_patch_count(self):
        pm = extract_patches(np.zeros((28, 28)), PatchSpec(7, 7))
        assert pm.shape == (49, 484)

    def test_image_smaller_than_patch(self):
        with pytest.raises(ShapeError):
            extract_patches(np.zeros((4, 9)), PatchSpec(5, 5))

    def test_patch_means_removed(self, rng):
        pm = remove_patch_means(extract_patches(rng.random((10, 10)), PatchSpec(3, 3)))
        np.testing.assert_allclose(pm.mean(axis=0), 0.0, atol=1e-12)

    def test_constant_image_gives_zero_block(self):
        block = centered_patches(np.full((6, 6), 0.7), PatchSpec(3, 3))
        np.testing.assert_allclose(block, 0.0, atol=1e-15)


class TestAssemble:
    def test_shape_and_row_means(self, rng):
        images = list(rng.random((4, 10, 11)))
        pm = assemble(images, PatchSpec(3, 3))
        assert pm.data.shape == (9, 4 * 8 * 9)
        assert pm.per_image_patch_count == 72
        assert pm.image_count == 4
        np.testing.assert_allclose(pm.data.mean(axis=1), 0.0, atol=1e-12)

    def test_blocks_follow_image_order(self, rng):
        images = list(rng.random((3, 6, 6)))
        spec = PatchSpec(3, 3)
        pm = assemble(images, spec)
        raw = np.hstack([remove_patch_means(extract_patches(img, spec)) for img in images])
        np.testing.assert_allclose(pm.data, raw - raw.mean(axis=1, keepdims=True))

    def test_cap_is_reproducible(self, rng):
        images = list(rng.random((3, 12, 12)))
        a = assemble(images, PatchSpec(3, 3), cap=10, seed=4)
        b = assemble(images, PatchSpec(3, 3), cap=10, seed=4)
        assert a.data.shape == (9, 30)
        np.testing.assert_array_equal(a.data, b.data)

    def test_cap_uses_per_image_generator(self, rng):
        images = list(rng.random((2, 12, 12)))
        spec = PatchSpec(3, 3)
        pm = assemble(images, spec, cap=5, seed=4, stage=2)
        raw = np.hstack([centered_patches(img, spec, cap=5, rng=patch_rng(4, 2, i))
                         for i, img in enumerate(images)])
        np.testing.assert_allclose(pm.data, raw - raw.mean(axis=1, keepdims=True))

    def test_mixed_sizes(self):
        with pytest.raises(ShapeError):
            assemble([np.zeros((5, 5)), np.zeros((5, 6))], PatchSpec(3, 3))

    def test_empty(self):
        with pytest.raises(ShapeError):
            assemble([], PatchSpec(3, 3))


class TestDenseSampling:
    def test_mean_removal_is_idempotent(self, rng):
        once = remove_patch_means(extract_patches(rng.random((9, 11)), PatchSpec(3, 5, 2)))
        np.testing.assert_allclose(remove_patch_means(once), once, rtol=0, atol=1e-12)

    def test_unit_interval_covers_interior_pixels_k1_k2_times(self):
        m, n, spec = 10, 12, PatchSpec(3, 5)
        img = np.arange(m * n, dtype=np.float64).reshape(m, n)
        pm = extract_patches(img, spec)
        assert pm.shape == (15, (m - 2) * (n - 4))
        counts = np.bincount(pm.astype(np.int64).ravel(), minlength=m * n).reshape(m, n)
        assert np.all(counts[2:m - 2, 4:n - 4] == 15)
        assert counts.sum() == pm.size
        assert assemble([img], spec).per_image_patch_count == (m - 2) * (n - 4)
