import os
import struct
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "Source"))

from Classifier import ClassifierConfig  # noqa: E402
from Config import OutputConfig, PipelineConfig, StageConfig  # noqa: E402
from ConvPool import PoolSpec  # noqa: E402
from DatasetIO import Dataset, LabeledImage  # noqa: E402
from OutputEncoding import BlockSpec  # noqa: E402
from PatchSampling import PatchSpec  # noqa: E402


def write_idx_files(tmp_path, pixels: np.ndarray, labels, image_count=None, label_count=None,
                    image_magic=0x803, label_magic=0x801):
    """Hand-built IDX pair; the counts in the headers can be forced to disagree"""
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    n, rows, cols = pixels.shape
    images_path.write_bytes(struct.pack(">IIII", image_magic, n if image_count is None else image_count,
                                        rows, cols) + pixels.astype(np.uint8).tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    labels_path.write_bytes(struct.pack(">II", label_magic,
                                        len(labels) if label_count is None else label_count)
                            + labels.tobytes())
    return str(images_path), str(labels_path)


def make_dataset(pixels: np.ndarray, labels, n_classes=None) -> Dataset:
    labels = [int(v) for v in labels]
    n_classes = n_classes or max(labels) + 1
    return Dataset([LabeledImage(p, l, f"toy#{i}") for i, (p, l) in enumerate(zip(pixels, labels))],
                   [str(c) for c in range(n_classes)])


def make_config(filters=(2, 3), patch=3, pools=None, indexing=None, mode="histogram",
                block=(4, 4), overlap=0.5, classifier=None, **pipeline) -> PipelineConfig:
    pools = pools or [PoolSpec()] * len(filters)
    stages = []
    for s, L in enumerate(filters):
        stages.append(StageConfig(PatchSpec(patch, patch), L, pools[s],
                                  indexing if s == 1 else None))
    return PipelineConfig(stages=tuple(stages),
                          output=OutputConfig(mode, BlockSpec(block[0], block[1], overlap)),
                          classifier=classifier or ClassifierConfig(epochs=5), **pipeline)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def toy_dataset():
    """5 random 16x16 images in two classes"""
    pixels = np.random.default_rng(7).random((5, 16, 16))
    return make_dataset(pixels, [0, 1, 0, 1, 0])


@pytest.fixture
def blob_dataset():
    """Two separable classes: bright blob top-left versus bottom-right, plus noise"""
    rng = np.random.default_rng(3)
    pixels, labels = [], []
    for i in range(24):
        img = rng.random((12, 12)) * 0.2
        if i % 2 == 0:
            img[1:6, 1:6] += 0.8
        else:
            img[6:11, 6:11] += 0.8
        pixels.append(img)
        labels.append(i % 2)
    return make_dataset(np.array(pixels), labels)
