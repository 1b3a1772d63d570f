"""Indexing matrices and the element-wise summation of feature-map subsets into groups."""
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from Errors import (ConfigError, EmptyGroupError, IndexingWidthError, NonBinaryEntryError,
                    OrphanSubsetError, ShapeError)


@dataclass
class IndexingMatrix:
    entries: np.ndarray   # (G, width) of 0/1

    @property
    def group_count(self) -> int:
        return self.entries.shape[0]

    @property
    def width(self) -> int:
        return self.entries.shape[1]

    def members(self, g: int) -> List[int]:
        return np.flatnonzero(self.entries[g]).tolist()

    def to_text(self) -> str:
        return ",".join("".join(str(int(v)) for v in row) for row in self.entries)


@dataclass
class Subset:
    maps: np.ndarray      # (N, h, w), index i = input image
    origin: str = ""

    def __len__(self) -> int:
        return self.maps.shape[0]


def identity(width: int) -> IndexingMatrix:
    return IndexingMatrix(np.eye(width, dtype=np.int8))


def adjacent_pairs(width: int) -> IndexingMatrix:
    """Group g sums subsets g and g+1, wrapping the last group back to the first subset"""
    entries = np.zeros((width, width), dtype=np.int8)
    for g in range(width):
        entries[g, g] = 1
        entries[g, (g + 1) % width] = 1
    return IndexingMatrix(entries)


def validate(ix: IndexingMatrix, L1: int):
    entries = np.asarray(ix.entries)
    if entries.ndim != 2 or not np.all(np.isin(entries, (0, 1))):
        raise NonBinaryEntryError("indexing matrix entries must all be 0 or 1")
    if entries.shape[1] != L1:
        raise IndexingWidthError(f"indexing matrix has {entries.shape[1]} columns, "
                                 f"previous stage yields {L1} subsets")
    empty_rows = np.flatnonzero(entries.sum(axis=1) == 0)
    if empty_rows.size:
        raise EmptyGroupError(f"groups {empty_rows.tolist()} select no subset")
    orphans = np.flatnonzero(entries.sum(axis=0) == 0)
    if orphans.size:
        raise OrphanSubsetError(f"subsets {orphans.tolist()} belong to no group")


def combine_maps(maps: np.ndarray, ix: IndexingMatrix) -> np.ndarray:
    """maps[l] are the subset maps (any trailing shape); returns one summed entry per group.
    Members are added in ascending subset order."""
    out = np.empty((ix.group_count,) + maps.shape[1:], dtype=maps.dtype)
    for g in range(ix.group_count):
        members = ix.members(g)
        acc = maps[members[0]].copy()
        for l in members[1:]:
            acc += maps[l]
        out[g] = acc
    return out


def combine(subsets: Sequence[Subset], ix: IndexingMatrix) -> List[Subset]:
    validate(ix, len(subsets))
    shapes = {s.maps.shape for s in subsets}
    if len(shapes) != 1:
        raise ShapeError(f"subsets differ in image count or map size: {sorted(shapes)}")
    stacked = np.stack([s.maps for s in subsets])
    combined = combine_maps(stacked, ix)
    return [Subset(combined[g], f"group {g}: subsets {ix.members(g)}")
            for g in range(ix.group_count)]


def parse_indexing(text: str, width: Optional[int] = None) -> IndexingMatrix:
    """'identity', 'adjacent-pairs', 'adjacent-pairs(5)' or 0/1 rows such as '11000,01100'"""
    spec = text.strip().lower()
    match = re.fullmatch(r"(identity|adjacent-pairs)(?:\((\d+)\))?", spec)
    if match:
        n = int(match.group(2)) if match.group(2) else width
        if n is None:
            raise ConfigError(f"indexing '{text}' needs a width")
        if width is not None and n != width:
            raise ConfigError(f"indexing '{text}' has width {n}, previous stage yields {width}")
        return identity(n) if match.group(1) == "identity" else adjacent_pairs(n)

    rows = [r for r in re.split(r"[,;\s]+", spec) if r]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"indexing rows '{text}' must be non-empty and of equal length")
    if not all(set(r) <= {"0", "1"} for r in rows):
        raise ConfigError(f"indexing rows '{text}' may only hold 0 and 1")
    return IndexingMatrix(np.array([[int(c) for c in r] for r in rows], dtype=np.int8))
