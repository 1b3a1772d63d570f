"""PCA filter banks: scatter matrix of a patch matrix, leading eigenvectors, reshaped kernels."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from Errors import ConfigError, EigenSolverError, ShapeError
from PatchSampling import VECTORIZE_ORDER, PatchMatrix, PatchSpec

logger = logging.getLogger(__name__)


@dataclass
class ScatterMatrix:
    s: np.ndarray
    sample_count: int


@dataclass
class FilterBank:
    filters: np.ndarray        # (L, k1, k2)
    eigenvalues: np.ndarray    # (L,), non-increasing
    stage: int
    group: Optional[int] = None

    def __len__(self) -> int:
        return self.filters.shape[0]

    @property
    def kernel_shape(self) -> Tuple[int, int]:
        return self.filters.shape[1], self.filters.shape[2]

    def vectors(self) -> np.ndarray:
        """Filters as rows, vectorized in patch order"""
        return self.filters.reshape(len(self), -1, order=VECTORIZE_ORDER)

    def gram(self) -> np.ndarray:
        v = self.vectors()
        return v @ v.T


def _mirror_upper(s: np.ndarray) -> np.ndarray:
    return np.triu(s) + np.triu(s, 1).T


def scatter(pm: PatchMatrix) -> ScatterMatrix:
    if pm.data.size == 0:
        raise ShapeError("cannot build a scatter matrix from an empty patch matrix")
    x = np.asarray(pm.data, dtype=np.float64)
    return ScatterMatrix(_mirror_upper(x @ x.T), x.shape[1])


class ScatterAccumulator:
    """Streams patch blocks (patch means already removed) into X X^T of the fully
    centered matrix without holding the concatenation in memory.

    Blocks are folded in the order they are added; merge() in a fixed order keeps the
    total reproducible however the blocks were split across workers."""

    def __init__(self, dim: int):
        self.dim = dim
        self.outer = np.zeros((dim, dim), dtype=np.float64)
        self.col_sum = np.zeros(dim, dtype=np.float64)
        self.count = 0

    def add(self, block: np.ndarray):
        if block.shape[0] != self.dim:
            raise ShapeError(f"block has {block.shape[0]} rows, accumulator expects {self.dim}")
        block = np.asarray(block, dtype=np.float64)
        self.outer += block @ block.T
        self.col_sum += block.sum(axis=1)
        self.count += block.shape[1]

    def merge(self, other: "ScatterAccumulator"):
        self.outer += other.outer
        self.col_sum += other.col_sum
        self.count += other.count

    def finalize(self) -> ScatterMatrix:
        if self.count == 0:
            raise ShapeError("cannot build a scatter matrix from an empty patch matrix")
        mean = self.col_sum / self.count
        s = self.outer - self.count * np.outer(mean, mean)
        return ScatterMatrix(_mirror_upper(s), self.count)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive (first index on ties)"""
    out = vectors.copy()
    for j in range(out.shape[1]):
        pivot = np.argmax(np.abs(out[:, j]))
        if out[pivot, j] < 0:
            out[:, j] = -out[:, j]
    return out


def top_eigenvectors(s: ScatterMatrix, L: int) -> Tuple[np.ndarray, np.ndarray]:
    d = s.s.shape[0]
    if not 1 <= L <= d:
        raise ConfigError(f"cannot take {L} eigenvectors of a {d}x{d} scatter matrix")
    try:
        values, vectors = linalg.eigh(s.s, subset_by_index=[d - L, d - 1])
    except (linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"eigendecomposition of {d}x{d} scatter matrix failed: {e}") from e
    if not np.all(np.isfinite(values)):
        raise EigenSolverError("eigensolver returned non-finite eigenvalues")

    order = np.arange(L)[::-1]
    values = np.maximum(values[order], 0.0)
    vectors = fix_signs(vectors[:, order])
    return vectors, values


def bank_from_scatter(s: ScatterMatrix, L: int, spec: PatchSpec, stage: int = 1,
                      group: Optional[int] = None) -> FilterBank:
    if s.s.shape[0] != spec.size:
        raise ShapeError(f"scatter matrix is {s.s.shape[0]}-dimensional, patch {spec.k1}x{spec.k2} "
                         f"needs {spec.size}")
    vectors, values = top_eigenvectors(s, L)
    filters = vectors.T.reshape(L, spec.k1, spec.k2, order=VECTORIZE_ORDER)
    logger.debug("Stage %d group %s: top eigenvalue %.4g over %d patches", stage, group,
                 values[0], s.sample_count)
    return FilterBank(np.ascontiguousarray(filters), values, stage, group)


def learn_bank(pm: PatchMatrix, L: int, spec: PatchSpec, stage: int = 1,
               group: Optional[int] = None) -> FilterBank:
    return bank_from_scatter(scatter(pm), L, spec, stage, group)


def export_banks(banks: Sequence[FilterBank], path: str):
    """All banks in one .npz, keyed stage<s>_group<g> (group 0 for stage 1)"""
    arrays = {}
    for bank in banks:
        key = f"stage{bank.stage}_group{bank.group or 0}"
        arrays[key + "_filters"] = bank.filters
        arrays[key + "_eigenvalues"] = bank.eigenvalues
    np.savez(path, **arrays)


def load_exported_banks(path: str) -> List[FilterBank]:
    banks = []
    with np.load(path) as data:
        for key in sorted(k for k in data.files if k.endswith("_filters")):
            stem = key[:-len("_filters")]
            stage_part, group_part = stem.split("_")
            stage = int(stage_part[len("stage"):])
            group = int(group_part[len("group"):])
            banks.append(FilterBank(data[key], data[stem + "_eigenvalues"], stage,
                                    group if stage > 1 else None))
    banks.sort(key=lambda b: (b.stage, b.group or 0))
    return banks
