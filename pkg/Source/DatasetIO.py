"""Labeled image datasets: MNIST IDX and amat files, class-per-folder image directories,
seeded splits."""
import gzip
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from Errors import (BadMagicError, ConfigError, CountMismatchError, DatasetError,
                    EmptyDatasetError, ImageDecodeError, InsufficientSamplesError, ShapeError,
                    TruncatedError)

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
PIXEL_SCALE = 255.0
WIDE_PIXEL_SCALE = 65535.0
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm")


@dataclass
class LabeledImage:
    pixels: np.ndarray
    label: int
    source_id: str

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape


@dataclass
class Dataset:
    images: List[LabeledImage] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def __getitem__(self, idx):
        return self.images[idx]

    @property
    def labels(self) -> np.ndarray:
        return np.array([img.label for img in self.images], dtype=np.int64)

    @property
    def image_shape(self) -> Tuple[int, int]:
        """Shared (m, n) of all images; raises if sizes differ"""
        shapes = {img.shape for img in self.images}
        if len(shapes) != 1:
            raise ShapeError(f"images do not share one size: {sorted(shapes)}")
        return shapes.pop()

    def pixel_stack(self) -> np.ndarray:
        _ = self.image_shape
        return np.stack([img.pixels for img in self.images])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.images[i] for i in indices], list(self.class_names))


@dataclass(frozen=True)
class SplitSpec:
    train_frac: Optional[float] = None
    per_class_count: Optional[int] = None
    seed: int = 0


def _open_binary(path: str):
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path: str, magic: int, n_dims: int) -> Tuple[Tuple[int, ...], bytes]:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with _open_binary(path) as f:
        raw = f.read()

    header_len = 4 + 4 * n_dims
    if len(raw) < 4:
        raise TruncatedError("file too short for magic number", path, len(raw))
    found, = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"magic number 0x{found:08x}, expected 0x{magic:08x}", path, 0)
    if len(raw) < header_len:
        raise TruncatedError("file too short for header", path, len(raw))

    dims = struct.unpack(">" + "I" * n_dims, raw[4:header_len])
    payload = int(np.prod(dims))
    if len(raw) < header_len + payload:
        raise TruncatedError(f"payload has {len(raw) - header_len} bytes, expected {payload}",
                             path, len(raw))
    return dims, raw[header_len:header_len + payload]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    (count, rows, cols), pixel_bytes = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    (label_count,), label_bytes = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if count != label_count:
        raise CountMismatchError(f"{label_count} labels for {count} images", labels_path, 4)

    pixels = np.frombuffer(pixel_bytes, dtype=np.uint8).reshape(count, rows, cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    n_classes = int(labels.max()) + 1 if count else 0

    base = os.path.basename(images_path)
    images = [
        LabeledImage(pixels[i].astype(np.float64) / PIXEL_SCALE, int(labels[i]), f"{base}#{i}")
        for i in range(count)
    ]
    logger.info("Loaded %d images of %dx%d from %s", count, rows, cols, images_path)
    return Dataset(images, [str(c) for c in range(n_classes)])


def load_amat(path: str, image_shape: Optional[Tuple[int, int]] = None) -> Dataset:
    """Text rows of m*n intensities in [0, 1] followed by the label, as the basic MNIST
    digits are distributed. Square images are assumed unless image_shape is given."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    opener = gzip.open if path.endswith(".gz") else open
    try:
        with opener(path, "rt", encoding="ascii") as f:
            lines = [line for line in f if line.strip()]
        rows = np.loadtxt(lines, dtype=np.float64, ndmin=2) if lines else None
    except ValueError as e:
        raise DatasetError(f"malformed rows: {e}", path) from e
    if rows is None:
        raise EmptyDatasetError("no rows", path)

    size = rows.shape[1] - 1
    if image_shape is None:
        side = math.isqrt(max(size, 0))
        image_shape = (side, side)
    m, n = image_shape
    if size < 1 or m * n != size:
        raise DatasetError(f"rows hold {size} pixels, {m}x{n} image expected", path)
    labels = rows[:, -1]
    if np.any(labels < 0) or np.any(labels != np.round(labels)):
        raise DatasetError("labels must be non-negative integers", path)
    pixels = rows[:, :-1]
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise DatasetError("intensities must lie in [0, 1]", path)

    labels = labels.astype(np.int64)
    pixels = pixels.reshape(len(rows), m, n)
    base = os.path.basename(path)
    images = [LabeledImage(pixels[i].copy(), int(labels[i]), f"{base}#{i}")
              for i in range(len(rows))]
    logger.info("Loaded %d images of %dx%d from %s", len(images), m, n, path)
    return Dataset(images, [str(c) for c in range(int(labels.max()) + 1)])


def write_idx(ds: Dataset, images_path: str, labels_path: str):
    rows, cols = ds.image_shape if len(ds) else (0, 0)
    pixels = np.rint(ds.pixel_stack() * PIXEL_SCALE).clip(0, 255).astype(np.uint8) \
        if len(ds) else np.zeros((0,), dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(ds), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(ds)))
        f.write(ds.labels.astype(np.uint8).tobytes())


def _decode_gray(path: str) -> np.ndarray:
    """Grayscale intensities in [0, 1]: 8-bit modes over 255, 16-bit integer modes over
    65535, float images taken as already normalized"""
    with Image.open(path) as img:
        if img.mode == "L":
            return np.asarray(img, dtype=np.float64) / PIXEL_SCALE
        if img.mode == "I" or img.mode.startswith("I;16"):
            return np.clip(np.asarray(img, dtype=np.float64) / WIDE_PIXEL_SCALE, 0.0, 1.0)
        if img.mode == "F":
            return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
        # unweighted channel mean
        return np.asarray(img.convert("RGB"), dtype=np.float64).mean(axis=2) / PIXEL_SCALE


def center_crop(pixels: np.ndarray, crop: Tuple[int, int]) -> np.ndarray:
    h, w = crop
    m, n = pixels.shape
    if h > m or w > n:
        raise ShapeError(f"crop {h}x{w} larger than image {m}x{n}")
    top = (m - h) // 2
    left = (n - w) // 2
    return pixels[top:top + h, left:left + w]


def load_image_dir(root: str, skip_undecodable: bool = False,
                   crop: Optional[Tuple[int, int]] = None) -> Dataset:
    if not os.path.isdir(root):
        raise FileNotFoundError(root)

    class_names = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    images = []
    for label, name in enumerate(class_names):
        class_dir = os.path.join(root, name)
        files = sorted(f for f in os.listdir(class_dir) if f.lower().endswith(IMAGE_EXTENSIONS))
        if not files:
            logger.warning("Class directory %s holds no images", class_dir)
        for filename in files:
            path = os.path.join(class_dir, filename)
            try:
                pixels = _decode_gray(path)
            except (UnidentifiedImageError, OSError) as e:
                if skip_undecodable:
                    logger.warning("Skipping undecodable image %s: %s", path, e)
                    continue
                raise ImageDecodeError(f"cannot decode image: {e}", path) from e
            if crop is not None:
                pixels = center_crop(pixels, crop)
            images.append(LabeledImage(pixels, label, f"{name}/{filename}"))

    if not images:
        raise EmptyDatasetError("no images found", root)
    logger.info("Loaded %d images in %d classes from %s", len(images), len(class_names), root)
    return Dataset(images, class_names)


def split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """Stratified split. per_class_count sends that many images of every class to the
    second part; train_frac keeps round(frac * class size) of every class in the first."""
    if (spec.train_frac is None) == (spec.per_class_count is None):
        raise ConfigError("split needs exactly one of train_frac or per_class_count")
    if spec.train_frac is not None and not 0.0 <= spec.train_frac <= 1.0:
        raise ConfigError(f"train_frac {spec.train_frac} outside [0, 1]")
    if spec.per_class_count is not None and spec.per_class_count < 0:
        raise ConfigError(f"per_class_count {spec.per_class_count} is negative")

    rng = np.random.default_rng(spec.seed)
    labels = ds.labels
    first, second = [], []
    for c in range(len(ds.class_names)):
        members = np.flatnonzero(labels == c)
        if spec.per_class_count is not None:
            n_second = spec.per_class_count
            if n_second > len(members):
                raise InsufficientSamplesError(
                    f"class '{ds.class_names[c]}' has {len(members)} images, "
                    f"{n_second} requested")
        else:
            n_second = len(members) - int(np.floor(spec.train_frac * len(members) + 0.5))
        shuffled = rng.permutation(members)
        second.extend(shuffled[:n_second].tolist())
        first.extend(shuffled[n_second:].tolist())

    return ds.subset(sorted(first)), ds.subset(sorted(second))
