"""Patch sampling: strided k1 x k2 patches, vectorized as columns and double-centered."""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from Errors import ConfigError, ShapeError

# Patches are flattened and filters reshaped with this one order.
VECTORIZE_ORDER = "C"


@dataclass(frozen=True)
class PatchSpec:
    k1: int
    k2: int
    k: int = 1

    def problems(self) -> List[str]:
        found = []
        if self.k1 < 1 or self.k2 < 1:
            found.append(f"patch {self.k1}x{self.k2} must be at least 1x1")
        if self.k1 % 2 == 0 or self.k2 % 2 == 0:
            found.append(f"patch {self.k1}x{self.k2} must have odd sides")
        if self.k < 1:
            found.append(f"sampling interval {self.k} must be >= 1")
        return found

    def validate(self):
        found = self.problems()
        if found:
            raise ConfigError(found)

    def fits(self, m: int, n: int) -> bool:
        return self.k1 <= m and self.k2 <= n

    @property
    def size(self) -> int:
        return self.k1 * self.k2


@dataclass
class PatchMatrix:
    data: np.ndarray
    per_image_patch_count: int
    image_count: int


def axis_positions(length: int, window: int, stride: int) -> List[int]:
    """Start offsets 0, s, 2s, ... with the last one clamped to length - window"""
    if window > length:
        raise ShapeError(f"window {window} larger than extent {length}")
    count = math.ceil((length - window) / stride) + 1
    last = length - window
    return [min(i * stride, last) for i in range(count)]


def patch_count(m: int, n: int, spec: PatchSpec) -> int:
    return (math.ceil((m - spec.k1) / spec.k) + 1) * (math.ceil((n - spec.k2) / spec.k) + 1)


def patch_positions(m: int, n: int, spec: PatchSpec) -> List[Tuple[int, int]]:
    rows = axis_positions(m, spec.k1, spec.k)
    cols = axis_positions(n, spec.k2, spec.k)
    return [(r, c) for r in rows for c in cols]


def extract_patches(img: np.ndarray, spec: PatchSpec) -> np.ndarray:
    m, n = img.shape
    if not spec.fits(m, n):
        raise ShapeError(f"image {m}x{n} smaller than patch {spec.k1}x{spec.k2}")
    rows = axis_positions(m, spec.k1, spec.k)
    cols = axis_positions(n, spec.k2, spec.k)
    windows = sliding_window_view(img, (spec.k1, spec.k2))[np.ix_(rows, cols)]
    cols_major = windows.reshape(len(rows) * len(cols), spec.size, order=VECTORIZE_ORDER)
    return np.ascontiguousarray(cols_major.T, dtype=np.float64)


def remove_patch_means(pm: np.ndarray) -> np.ndarray:
    if pm.size == 0:
        return pm.copy()
    return pm - pm.mean(axis=0, keepdims=True)


def subsample_columns(pm: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Keep at most cap columns, chosen by rng and kept in position order"""
    if cap <= 0 or pm.shape[1] <= cap:
        return pm
    keep = np.sort(rng.choice(pm.shape[1], size=cap, replace=False))
    return pm[:, keep]


def centered_patches(img: np.ndarray, spec: PatchSpec, cap: int = 0,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """One image's block of the patch matrix, patch means removed"""
    block = extract_patches(img, spec)
    if cap > 0:
        block = subsample_columns(block, cap, rng if rng is not None else np.random.default_rng(0))
    return remove_patch_means(block)


def patch_rng(seed: int, stage: int, index: int) -> np.random.Generator:
    """Per-image generator for patch capping, independent of how images are batched"""
    return np.random.default_rng([seed, stage, index])


def assemble(images: Sequence[np.ndarray], spec: PatchSpec, cap: int = 0,
             seed: int = 0, stage: int = 0) -> PatchMatrix:
    if not images:
        raise ShapeError("no maps to sample patches from")
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"maps do not share one size: {sorted(shapes)}")

    blocks = [centered_patches(img, spec, cap, patch_rng(seed, stage, i))
              for i, img in enumerate(images)]
    data = np.hstack(blocks)
    data -= data.mean(axis=1, keepdims=True)
    return PatchMatrix(data, blocks[0].shape[1], len(images))
