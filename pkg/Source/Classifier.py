"""One-vs-rest linear SVM trained with a seeded mini-batch stochastic subgradient schedule."""
import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy import sparse
from sklearn.metrics import confusion_matrix

from Errors import ConfigError, ShapeError, SingleClassError, TrainingError
from OutputEncoding import EncodedFeature, to_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassifierConfig:
    reg_c: float = 1.0
    epochs: int = 20
    seed: int = 0
    tol: float = 1e-4
    batch_size: int = 32

    def problems(self) -> List[str]:
        found = []
        if self.reg_c <= 0:
            found.append(f"reg_c {self.reg_c} must be positive")
        if self.epochs < 1:
            found.append(f"epochs {self.epochs} must be >= 1")
        if self.tol < 0:
            found.append(f"tol {self.tol} must be >= 0")
        if self.batch_size < 1:
            found.append(f"batch_size {self.batch_size} must be >= 1")
        return found


@dataclass
class LinearModel:
    weights: np.ndarray          # (C, D)
    bias: np.ndarray             # (C,)
    classes: List[int]
    reg_c: float
    train_meta: Dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def scores(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != self.dim:
            raise ShapeError(f"feature dimension {X.shape[1]}, model expects {self.dim}")
        return np.asarray(X @ self.weights.T) + self.bias


def as_matrix(features):
    """Sparse CSR (or dense 2-D) view of one vector, a list of vectors or a matrix"""
    if sparse.issparse(features):
        return features.tocsr()
    if isinstance(features, EncodedFeature):
        return features.to_sparse()
    if isinstance(features, np.ndarray):
        return features[None, :] if features.ndim == 1 else features
    return to_matrix(features)


def _objective(X, Y, W, b, lam) -> np.ndarray:
    margins = Y * (np.asarray(X @ W.T) + b)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return 0.5 * lam * (np.einsum("cd,cd->c", W, W) + b * b) + hinge


def train(features, labels: Sequence[int], cfg: ClassifierConfig = ClassifierConfig()) -> LinearModel:
    found = cfg.problems()
    if found:
        raise ConfigError(found)
    X = as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    n, D = X.shape
    if n != len(y):
        raise ShapeError(f"{n} feature vectors for {len(y)} labels")
    classes = np.unique(y)
    if len(classes) < 2:
        raise SingleClassError(f"training needs at least 2 classes, got {classes.tolist()}")

    Y = np.where(y[:, None] == classes[None, :], 1.0, -1.0)
    C = len(classes)
    lam = 1.0 / (cfg.reg_c * n)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(cfg.seed)

    W = np.zeros((C, D), dtype=np.float64)
    b = np.zeros(C, dtype=np.float64)
    best_W, best_b = W.copy(), b.copy()
    best = np.inf
    history = []
    t = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            t += 1
            eta = 1.0 / (lam * t)
            Xb = X[idx]
            Yb = Y[idx]
            violated = Yb * (np.asarray(Xb @ W.T) + b) < 1.0
            coef = np.where(violated, Yb, 0.0) / len(idx)

            shrink = 1.0 - eta * lam
            W *= shrink
            b *= shrink
            W += eta * np.asarray(Xb.T @ coef).T
            b += eta * coef.sum(axis=0)

            norms = np.sqrt(np.einsum("cd,cd->c", W, W) + b * b)
            scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            W *= scale[:, None]
            b *= scale

        objective = float(_objective(X, Y, W, b, lam).sum())
        if not np.isfinite(objective):
            raise TrainingError(f"objective diverged at epoch {epoch}")
        previous = best
        if objective < best:
            best = objective
            best_W, best_b = W.copy(), b.copy()
        history.append((epoch, objective, best))
        logger.info("Classifier epoch %d: objective %.6g (best %.6g)", epoch, objective, best)
        if np.isfinite(previous) and 0.0 < previous - best <= cfg.tol * previous:
            logger.info("Classifier converged after %d epochs", epoch)
            break

    meta = {"seed": cfg.seed, "epochs": len(history), "final_objective": best,
            "history": history, "batch_size": cfg.batch_size, "tol": cfg.tol}
    return LinearModel(best_W, best_b, classes.tolist(), cfg.reg_c, meta)


def predict_many(model: LinearModel, features) -> np.ndarray:
    # argmax keeps the lowest class index on ties
    winners = np.argmax(model.scores(features), axis=1)
    return np.asarray(model.classes)[winners]


def predict(model: LinearModel, feature) -> int:
    return int(predict_many(model, feature)[0])


def evaluate(model: LinearModel, features, labels: Sequence[int]) -> Dict:
    y = np.asarray(labels, dtype=np.int64)
    predictions = predict_many(model, features) if len(y) else np.zeros(0, dtype=np.int64)
    return evaluate_predictions(predictions, y, model.classes)


def evaluate_predictions(predictions: np.ndarray, labels: np.ndarray, classes: Sequence[int]) -> Dict:
    all_classes = sorted(set(classes) | set(np.asarray(labels).tolist()))
    matrix = confusion_matrix(labels, predictions, labels=all_classes) if len(labels) \
        else np.zeros((len(all_classes), len(all_classes)), dtype=np.int64)
    support = matrix.sum(axis=1)
    per_class = {c: float(matrix[i, i] / support[i]) for i, c in enumerate(all_classes) if support[i]}
    accuracy = float(np.trace(matrix) / len(labels)) if len(labels) else 0.0
    return {"accuracy": accuracy, "per_class_accuracy": per_class,
            "confusion_matrix": matrix, "classes": all_classes}


def write_training_log(model: LinearModel, path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "objective", "best_objective"])
        for epoch, objective, best in model.train_meta.get("history", []):
            writer.writerow([epoch, repr(objective), repr(best)])
