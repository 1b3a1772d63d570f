import csv

import numpy as np
import pytest
from scipy import sparse

from Classifier import (ClassifierConfig, LinearModel, evaluate, evaluate_predictions, predict,
                        predict_many, train, write_training_log)
from Errors import ConfigError, ShapeError, SingleClassError
from OutputEncoding import EncodedFeature


@pytest.fixture
def separable():
    rng = np.random.default_rng(5)
    a = np.array([0.0, 1.0]) + rng.uniform(-0.1, 0.1, size=(20, 2))
    b = np.array([1.0, 0.0]) + rng.uniform(-0.1, 0.1, size=(20, 2))
    X = np.vstack([a, b])
    y = np.array([0] * 20 + [1] * 20)
    return X, y


LONG = ClassifierConfig(reg_c=1.0, epochs=200, seed=0, tol=0.0, batch_size=8)


class TestTrain:
    def test_separable_toy(self, separable):
        X, y = separable
        model = train(X, y, LONG)
        assert evaluate(model, X, y)["accuracy"] == 1.0
        assert np.all(np.isfinite(model.weights))

    def test_one_hot_three_classes(self):
        X = np.tile(np.eye(3), (10, 1))
        y = np.tile(np.arange(3), 10)
        model = train(X, y, LONG)
        assert predict_many(model, np.eye(3)).tolist() == [0, 1, 2]

    def test_sparse_encoded_features(self):
        features = [EncodedFeature(np.array([c]), np.array([4]), 3) for c in (0, 1, 2) * 6]
        labels = [0, 1, 2] * 6
        model = train(features, labels, LONG)
        assert evaluate(model, features, labels)["accuracy"] == 1.0
        assert model.dim == 3

    def test_duplicates_keep_predictions(self, separable):
        X, y = separable
        points = np.array([[0.0, 1.2], [1.2, 0.0], [-0.2, 0.8], [0.9, -0.1]])
        once = predict_many(train(X, y, LONG), points)
        twice = predict_many(train(np.vstack([X, X]), np.concatenate([y, y]), LONG), points)
        np.testing.assert_array_equal(once, twice)

    def test_same_seed_bit_identical(self, separable):
        X, y = separable
        cfg = ClassifierConfig(epochs=10, seed=3)
        a, b = train(X, y, cfg), train(X, y, cfg)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)
        assert a.train_meta == b.train_meta

    def test_best_objective_non_increasing(self, separable):
        X, y = separable
        model = train(X, y, ClassifierConfig(epochs=30, tol=0.0))
        best = [row[2] for row in model.train_meta["history"]]
        assert all(later <= earlier for earlier, later in zip(best, best[1:]))
        assert model.train_meta["final_objective"] == best[-1]
        assert model.train_meta["seed"] == 0

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            train(np.ones((4, 2)), [1, 1, 1, 1])

    def test_label_count_mismatch(self):
        with pytest.raises(ShapeError):
            train(np.ones((4, 2)), [0, 1, 0])

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            train(np.ones((4, 2)), [0, 1, 0, 1], ClassifierConfig(reg_c=0.0))

    def test_classes_keep_their_labels(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0]] * 5)
        y = [3, 7] * 5
        model = train(X, y, LONG)
        assert model.classes == [3, 7]
        assert predict(model, np.array([1.0, 0.0])) == 3


class TestPredict:
    def test_zero_model_picks_first_class(self):
        model = LinearModel(np.zeros((3, 4)), np.zeros(3), [0, 1, 2], 1.0)
        assert predict(model, np.ones(4)) == 0

    def test_largest_score_wins(self):
        weights = np.array([[1.0, 0.0], [0.0, 2.0], [0.5, 0.5]])
        model = LinearModel(weights, np.zeros(3), [0, 1, 2], 1.0)
        assert predict(model, np.array([1.0, 1.0])) == 1

    def test_positive_scaling_keeps_argmax(self, rng):
        weights, bias = rng.standard_normal((4, 6)), rng.standard_normal(4)
        X = rng.standard_normal((20, 6))
        base = predict_many(LinearModel(weights, bias, [0, 1, 2, 3], 1.0), X)
        scaled = predict_many(LinearModel(7.5 * weights, 7.5 * bias, [0, 1, 2, 3], 1.0), X)
        np.testing.assert_array_equal(base, scaled)

    def test_dimension_mismatch(self):
        model = LinearModel(np.zeros((2, 3)), np.zeros(2), [0, 1], 1.0)
        with pytest.raises(ShapeError):
            predict(model, np.ones(4))

    def test_accepts_sparse_rows(self):
        model = LinearModel(np.eye(2), np.zeros(2), [0, 1], 1.0)
        X = sparse.csr_matrix(np.array([[0.0, 2.0], [3.0, 0.0]]))
        assert predict_many(model, X).tolist() == [1, 0]


class TestEvaluate:
    def test_perfect(self):
        labels = np.array([0, 1, 2, 1])
        result = evaluate_predictions(labels.copy(), labels, [0, 1, 2])
        assert result["accuracy"] == 1.0
        matrix = result["confusion_matrix"]
        np.testing.assert_array_equal(matrix, np.diag(np.diag(matrix)))
        assert result["per_class_accuracy"] == {0: 1.0, 1: 1.0, 2: 1.0}

    def test_all_zero_on_balanced_ten(self):
        labels = np.repeat(np.arange(10), 3)
        result = evaluate_predictions(np.zeros(30, dtype=int), labels, list(range(10)))
        assert result["accuracy"] == pytest.approx(0.1)
        assert result["confusion_matrix"][:, 0].tolist() == [3] * 10

    def test_rows_are_true_class(self):
        result = evaluate_predictions(np.array([1, 1]), np.array([0, 1]), [0, 1])
        assert result["confusion_matrix"].tolist() == [[0, 1], [0, 1]]


def test_training_log(tmp_path, separable):
    X, y = separable
    model = train(X, y, ClassifierConfig(epochs=3, tol=0.0))
    path = tmp_path / "log.csv"
    write_training_log(model, str(path))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "objective", "best_objective"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
