import numpy as np
import pytest
from scipy.linalg import subspace_angles

from Errors import ConfigError, EigenSolverError, ShapeError
from FilterLearning import (FilterBank, ScatterAccumulator, ScatterMatrix, export_banks,
                            fix_signs, learn_bank, load_exported_banks, scatter, top_eigenvectors)
from PatchSampling import PatchMatrix, PatchSpec, assemble, centered_patches


def oracle(s: np.ndarray, L: int):
    values, vectors = np.linalg.eigh(s)
    order = np.argsort(values)[::-1][:L]
    return np.maximum(values[order], 0.0), vectors[:, order], values[np.argsort(values)[::-1]]


class TestPcaOracle:
    def test_random_patch_matrices(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            d = int(rng.integers(1, 50))
            n = int(rng.integers(d, 5001))
            L = int(rng.integers(1, d + 1))
            pm = PatchMatrix(rng.standard_normal((d, n)), n, 1)
            s = scatter(pm)
            vectors, values = top_eigenvectors(s, L)
            expected_values, expected_vectors, spectrum = oracle(s.s, L)

            scale = max(spectrum[0], 1e-300)
            np.testing.assert_allclose(values, expected_values, rtol=0, atol=1e-8 * scale)
            assert np.all(np.diff(values) <= 0)

            for j in range(L):
                gaps = [abs(spectrum[j] - spectrum[i]) for i in (j - 1, j + 1) if 0 <= i < d]
                if all(g > 1e-6 * scale for g in gaps):
                    cosine = abs(vectors[:, j] @ expected_vectors[:, j])
                    assert cosine >= 1 - 1e-8
                else:
                    cluster = [i for i in range(L) if abs(spectrum[i] - spectrum[j]) <= 1e-6 * scale]
                    angles = subspace_angles(vectors[:, cluster], expected_vectors[:, cluster])
                    assert np.max(angles) <= 1e-6

    def test_orthonormal_filters(self, rng):
        spec = PatchSpec(5, 5)
        pm = assemble(list(rng.random((6, 12, 12))), spec)
        bank = learn_bank(pm, 8, spec)
        assert bank.filters.shape == (8, 5, 5)
        np.testing.assert_allclose(bank.gram(), np.eye(8), atol=1e-10)
        assert np.all(bank.eigenvalues >= 0)
        assert bank.stage == 1 and bank.group is None

    def test_vectors_reshape_in_patch_order(self, rng):
        spec = PatchSpec(3, 5)
        pm = assemble(list(rng.random((3, 9, 9))), spec)
        vectors, _ = top_eigenvectors(scatter(pm), 4)
        bank = learn_bank(pm, 4, spec)
        np.testing.assert_array_equal(bank.vectors(), vectors.T)
        np.testing.assert_array_equal(bank.filters[2], vectors[:, 2].reshape(3, 5))


class TestSigns:
    def test_largest_component_positive(self):
        v = np.array([[0.1, -0.2], [-0.9, 0.5], [0.3, -0.8]])
        fixed = fix_signs(v)
        np.testing.assert_array_equal(fixed[:, 0], -v[:, 0])
        np.testing.assert_array_equal(fixed[:, 1], -v[:, 1])

    def test_ties_use_first_index(self):
        v = np.array([[-0.5], [0.5]])
        np.testing.assert_array_equal(fix_signs(v), [[0.5], [-0.5]])

    def test_learned_filters_follow_rule(self, rng):
        spec = PatchSpec(3, 3)
        bank = learn_bank(assemble(list(rng.random((4, 8, 8))), spec), 5, spec)
        for vec in bank.vectors():
            assert vec[np.argmax(np.abs(vec))] > 0


class TestScatter:
    def test_symmetric(self, rng):
        s = scatter(PatchMatrix(rng.standard_normal((9, 40)), 40, 1)).s
        np.testing.assert_array_equal(s, s.T)

    def test_empty(self):
        with pytest.raises(ShapeError):
            scatter(PatchMatrix(np.zeros((9, 0)), 0, 0))

    def test_accumulator_matches_dense(self, rng):
        spec = PatchSpec(3, 3)
        images = list(rng.random((7, 10, 10)))
        dense = scatter(assemble(images, spec))

        halves = [ScatterAccumulator(9), ScatterAccumulator(9)]
        for i, img in enumerate(images):
            halves[i // 4].add(centered_patches(img, spec))
        halves[0].merge(halves[1])
        streamed = halves[0].finalize()

        assert streamed.sample_count == dense.sample_count
        np.testing.assert_allclose(streamed.s, dense.s, rtol=1e-10, atol=1e-10)
        np.testing.assert_array_equal(streamed.s, streamed.s.T)

    def test_accumulator_rejects_wrong_dim(self):
        with pytest.raises(ShapeError):
            ScatterAccumulator(9).add(np.zeros((4, 3)))


class TestErrors:
    def test_L_out_of_range(self):
        s = ScatterMatrix(np.eye(4), 10)
        with pytest.raises(ConfigError):
            top_eigenvectors(s, 5)
        with pytest.raises(ConfigError):
            top_eigenvectors(s, 0)

    def test_non_finite(self):
        s = ScatterMatrix(np.full((3, 3), np.nan), 3)
        with pytest.raises(EigenSolverError):
            top_eigenvectors(s, 1)

    def test_zero_matrix_gives_zero_eigenvalues(self):
        vectors, values = top_eigenvectors(ScatterMatrix(np.zeros((4, 4)), 4), 2)
        np.testing.assert_array_equal(values, [0.0, 0.0])
        np.testing.assert_allclose(vectors.T @ vectors, np.eye(2), atol=1e-12)


def test_export_round_trip(tmp_path, rng):
    banks = [FilterBank(rng.random((2, 3, 3)), np.array([2.0, 1.0]), 1),
             FilterBank(rng.random((3, 3, 3)), np.array([3.0, 2.0, 1.0]), 2, 1),
             FilterBank(rng.random((3, 3, 3)), np.array([4.0, 2.0, 1.0]), 2, 0)]
    path = str(tmp_path / "filters.npz")
    export_banks(banks, path)
    loaded = load_exported_banks(path)
    assert [(b.stage, b.group) for b in loaded] == [(1, None), (2, 0), (2, 1)]
    np.testing.assert_array_equal(loaded[1].filters, banks[2].filters)
    np.testing.assert_array_equal(loaded[2].eigenvalues, banks[1].eigenvalues)


class TestSpectrum:
    def test_eigen_residual_and_trace(self, rng):
        spec = PatchSpec(5, 3)
        s = scatter(assemble(list(rng.random((5, 14, 13))), spec))
        vectors, values = top_eigenvectors(s, spec.size)
        for j in range(spec.size):
            residual = s.s @ vectors[:, j] - values[j] * vectors[:, j]
            assert np.linalg.norm(residual) <= 1e-7 * values[0]
        assert values.sum() <= np.trace(s.s) * (1 + 1e-9)

    def test_row_only_images_give_column_constant_filter(self, rng):
        spec = PatchSpec(3, 3)
        images = [np.repeat(rng.random((10, 1)), 8, axis=1) for _ in range(4)]
        bank = learn_bank(assemble(images, spec), 1, spec)
        first = bank.filters[0]
        assert bank.eigenvalues[0] > 0
        np.testing.assert_allclose(first, np.repeat(first[:, :1], 3, axis=1), rtol=0, atol=1e-10)

    def test_full_basis_is_orthonormal(self, rng):
        spec = PatchSpec(3, 3)
        bank = learn_bank(assemble(list(rng.random((3, 9, 9))), spec), spec.size, spec)
        assert len(bank) == 9
        np.testing.assert_allclose(bank.gram(), np.eye(9), rtol=0, atol=1e-10)
