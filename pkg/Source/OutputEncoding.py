"""Output stage: binary hashing of the final maps, block-wise histograms, raw bypass."""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse
from sklearn.datasets import dump_svmlight_file

from Errors import ConfigError, EncodingError, ShapeError
from PatchSampling import axis_positions

MAX_HASH_BITS = 24
OUTPUT_MODES = ("histogram", "raw")


def _half_up_stride(b: int, overlap_ratio: float) -> int:
    """max(1, round(b * (1 - overlap))) with exact halves rounded up"""
    step = b * (1 - Fraction(str(float(overlap_ratio))))
    return max(1, math.floor(step + Fraction(1, 2)))


@dataclass(frozen=True)
class BlockSpec:
    b1: int
    b2: int
    overlap_ratio: float = 0.0

    def problems(self) -> List[str]:
        found = []
        if self.b1 < 1 or self.b2 < 1:
            found.append(f"block {self.b1}x{self.b2} must be at least 1x1")
        if not 0.0 <= self.overlap_ratio < 1.0:
            found.append(f"block overlap {self.overlap_ratio} must lie in [0, 1)")
        return found

    @property
    def strides(self) -> Tuple[int, int]:
        return (_half_up_stride(self.b1, self.overlap_ratio),
                _half_up_stride(self.b2, self.overlap_ratio))

    def fits(self, h: int, w: int) -> bool:
        return self.b1 <= h and self.b2 <= w


@dataclass
class EncodedFeature:
    indices: np.ndarray   # ascending, 0-based
    values: np.ndarray
    length: int

    def to_sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.values.astype(np.float64), self.indices,
                                  np.array([0, len(self.indices)])), shape=(1, self.length))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.length, dtype=np.int64)
        out[self.indices] = self.values
        return out

    def total(self) -> int:
        return int(self.values.sum())


def block_positions(h: int, w: int, spec: BlockSpec) -> List[Tuple[int, int]]:
    if not spec.fits(h, w):
        raise ShapeError(f"block {spec.b1}x{spec.b2} larger than map {h}x{w}")
    s1, s2 = spec.strides
    return [(r, c) for r in axis_positions(h, spec.b1, s1) for c in axis_positions(w, spec.b2, s2)]


def block_count(h: int, w: int, spec: BlockSpec) -> int:
    s1, s2 = spec.strides
    return len(axis_positions(h, spec.b1, s1)) * len(axis_positions(w, spec.b2, s2))


def feature_length(groups: int, blocks: int, L2: int) -> int:
    return groups * blocks * (1 << L2)


def heaviside(values: np.ndarray) -> np.ndarray:
    return (np.asarray(values) > 0).astype(np.uint8)


def encode_decimal(bits: Sequence[np.ndarray]) -> np.ndarray:
    """Bit from the first map (largest eigenvalue) is the most significant"""
    L2 = len(bits)
    if not 1 <= L2 <= MAX_HASH_BITS:
        raise EncodingError(f"{L2} binary maps; hashing supports 1 to {MAX_HASH_BITS}")
    shapes = {np.shape(b) for b in bits}
    if len(shapes) != 1:
        raise ShapeError(f"binary maps differ in shape: {sorted(shapes)}")
    out = np.zeros(shapes.pop(), dtype=np.int64)
    for b in bits:
        out = (out << 1) | np.asarray(b, dtype=np.int64)
    return out


def _block_codes(int_map: np.ndarray, spec: BlockSpec) -> np.ndarray:
    """(B, b1*b2) decimal values per block, blocks row-major"""
    h, w = int_map.shape
    if not spec.fits(h, w):
        raise ShapeError(f"block {spec.b1}x{spec.b2} larger than map {h}x{w}")
    s1, s2 = spec.strides
    rows = axis_positions(h, spec.b1, s1)
    cols = axis_positions(w, spec.b2, s2)
    windows = sliding_window_view(int_map, (spec.b1, spec.b2))[np.ix_(rows, cols)]
    return windows.reshape(len(rows) * len(cols), spec.b1 * spec.b2)


def _check_range(int_map: np.ndarray, L2: int):
    if int_map.size and (int_map.min() < 0 or int_map.max() >= (1 << L2)):
        raise EncodingError(f"decimal values outside [0, {(1 << L2) - 1}]")


def block_histograms(int_map: np.ndarray, spec: BlockSpec, L2: int) -> sparse.csr_matrix:
    """Row b is the 2^L2-bin histogram of block b"""
    _check_range(int_map, L2)
    codes = _block_codes(int_map, spec)
    n_blocks, per_block = codes.shape
    rows = np.repeat(np.arange(n_blocks), per_block)
    ones = np.ones(codes.size, dtype=np.int64)
    hist = sparse.coo_matrix((ones, (rows, codes.ravel())), shape=(n_blocks, 1 << L2)).tocsr()
    hist.sum_duplicates()
    hist.sort_indices()
    return hist


def encode_image(final_maps: np.ndarray, spec: BlockSpec) -> EncodedFeature:
    """final_maps: (G, L2, h, w). Layout group-major, block-middle, bin-minor."""
    if final_maps.ndim != 4:
        raise ShapeError(f"expected (groups, maps, h, w), got shape {final_maps.shape}")
    G, L2, h, w = final_maps.shape
    if not 1 <= L2 <= MAX_HASH_BITS:
        raise EncodingError(f"{L2} maps per group; hashing supports 1 to {MAX_HASH_BITS}")
    n_bins = 1 << L2
    B = block_count(h, w, spec)
    keys = []
    for g in range(G):
        decimal = encode_decimal(heaviside(final_maps[g]))
        codes = _block_codes(decimal, spec)
        keys.append((g * B + np.arange(B))[:, None] * n_bins + codes)
    indices, counts = np.unique(np.concatenate([k.ravel() for k in keys]), return_counts=True)
    return EncodedFeature(indices.astype(np.int64), counts.astype(np.int64),
                          feature_length(G, B, L2))


def encode_raw(final_maps: np.ndarray) -> np.ndarray:
    """Row-major flatten of every map, group-major then filter-major"""
    return np.ascontiguousarray(final_maps, dtype=np.float64).ravel()


def to_matrix(features: Sequence) -> sparse.csr_matrix:
    """Stack EncodedFeature or dense vectors into one sparse matrix"""
    rows = []
    for f in features:
        rows.append(f.to_sparse() if isinstance(f, EncodedFeature)
                    else sparse.csr_matrix(np.asarray(f, dtype=np.float64)[None, :]))
    if not rows:
        raise ShapeError("no features to stack")
    return sparse.vstack(rows, format="csr")


def write_svmlight(features: Sequence, labels: Sequence[int], path: str):
    """label idx:val ..., indices 1-based and ascending"""
    if len(features) != len(labels):
        raise ConfigError(f"{len(features)} features for {len(labels)} labels")
    X = to_matrix(features)
    X.sort_indices()
    dump_svmlight_file(X, np.asarray(labels), path, zero_based=False)
