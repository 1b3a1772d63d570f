"""Same-size zero-padded filtering and non-overlapping max/average pooling."""
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from Errors import ConfigError, ShapeError

POOL_MODES = ("max", "average")


@dataclass(frozen=True)
class Provenance:
    image: int
    stage: int = 0
    filter: Optional[int] = None
    group: Optional[int] = None


@dataclass
class FeatureMap:
    values: np.ndarray
    provenance: Provenance = Provenance(0)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PoolSpec:
    p: int = 1
    q: int = 1
    mode: str = "max"
    enabled: bool = False

    def problems(self) -> List[str]:
        found = []
        if self.p < 1 or self.q < 1:
            found.append(f"pool region {self.p}x{self.q} must be at least 1x1")
        if self.mode not in POOL_MODES:
            found.append(f"pool mode '{self.mode}' not one of {', '.join(POOL_MODES)}")
        return found

    def output_shape(self, h: int, w: int) -> Tuple[int, int]:
        if not self.enabled:
            return h, w
        return -(-h // self.p), -(-w // self.q)

    def describe(self) -> str:
        return f"{self.mode} {self.p}x{self.q}" if self.enabled else "off"


def correlate_same(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k1, k2 = kernel.shape
    if k1 % 2 == 0 or k2 % 2 == 0:
        raise ShapeError(f"kernel {k1}x{k2} must have odd sides for same-size filtering")
    return signal.correlate2d(values, kernel, mode="same", boundary="fill", fillvalue=0.0)


def convolve_same(fmap: FeatureMap, kernel: np.ndarray) -> FeatureMap:
    """Correlation orientation: out(r, c) = sum map(r+u-k1//2, c+v-k2//2) * kernel(u, v)"""
    return FeatureMap(correlate_same(fmap.values, kernel), fmap.provenance)


def apply_bank(maps: Sequence[FeatureMap], bank, stage: Optional[int] = None) -> List[FeatureMap]:
    """Map-major, filter-minor: output[i * L + l] is maps[i] filtered by filter l"""
    shapes = {m.values.shape for m in maps}
    if len(shapes) > 1:
        raise ShapeError(f"maps do not share one size: {sorted(shapes)}")
    stage = bank.stage if stage is None else stage
    out = []
    for fmap in maps:
        for l, kernel in enumerate(bank.filters):
            values = correlate_same(fmap.values, kernel)
            out.append(FeatureMap(values, replace(fmap.provenance, stage=stage, filter=l,
                                                  group=bank.group)))
    return out


def pool_values(values: np.ndarray, spec: PoolSpec) -> np.ndarray:
    if not spec.enabled:
        return values
    h, w = values.shape
    out_h, out_w = spec.output_shape(h, w)
    padded = np.zeros((out_h * spec.p, out_w * spec.q), dtype=values.dtype)
    padded[:h, :w] = values
    cells = padded.reshape(out_h, spec.p, out_w, spec.q)
    if spec.mode == "max":
        return cells.max(axis=(1, 3))
    # divide by the full region, pad zeros included
    return cells.sum(axis=(1, 3)) / (spec.p * spec.q)


def pool(fmap: FeatureMap, spec: PoolSpec) -> FeatureMap:
    return FeatureMap(pool_values(fmap.values, spec), fmap.provenance)


def parse_pool(text: str) -> PoolSpec:
    """'off', 'max 2x2', 'average 3x2'"""
    words = text.strip().lower().split()
    if not words or words[0] in ("off", "none", "disabled", "no"):
        return PoolSpec()
    if len(words) != 2:
        raise ConfigError(f"cannot parse pool '{text}', expected e.g. 'max 2x2' or 'off'")
    mode = "average" if words[0] in ("avg", "mean") else words[0]
    try:
        p, q = (int(v) for v in words[1].split("x"))
    except ValueError:
        raise ConfigError(f"cannot parse pool region '{words[1]}', expected PxQ") from None
    spec = PoolSpec(p, q, mode, True)
    found = spec.problems()
    if found:
        raise ConfigError(found)
    return spec
