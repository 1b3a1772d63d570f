"""The PCN end to end: stage-by-stage filter fitting, per-image transform and the
single-file model archive."""
import hashlib
import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

import Classifier
from Config import PipelineConfig, canonical_text, config_hash, parse_config_text
from ConvPool import correlate_same, pool_values
from DatasetIO import Dataset
from Errors import (ArchiveError, ArchiveVersionError, ChecksumError, EmptyDatasetError,
                    IncompatibleModelError, ShapeError)
from FilterLearning import (FilterBank, ScatterAccumulator, ScatterMatrix, bank_from_scatter,
                            scatter)
from Grouping import IndexingMatrix, combine_maps
from OutputEncoding import encode_image, encode_raw
from PatchSampling import assemble, centered_patches, patch_count, patch_rng

logger = logging.getLogger(__name__)

ARCHIVE_MAGIC = b"PCNMODEL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI")
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass
class PcnModel:
    config: PipelineConfig
    image_shape: Tuple[int, int]
    banks: List[List[FilterBank]] = field(default_factory=list)      # banks[s][g]
    indexing: List[Optional[IndexingMatrix]] = field(default_factory=list)
    classifier: Optional[Classifier.LinearModel] = None
    class_names: List[str] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @property
    def mode(self) -> str:
        return self.config.output.mode

    @property
    def feature_dim(self) -> int:
        return self.config.feature_length(*self.image_shape)

    def all_banks(self) -> List[FilterBank]:
        return [bank for stage_banks in self.banks for bank in stage_banks]

    def advance(self, inputs: np.ndarray, s: int) -> np.ndarray:
        """Run stage index s on its input groups (G, h, w).

        Returns the next stage's input groups, or (G, L, h', w') after the last stage."""
        stage = self.config.stages[s]
        filtered = np.stack([
            np.stack([pool_values(correlate_same(inputs[g], kernel), stage.pool)
                      for kernel in self.banks[s][g].filters])
            for g in range(inputs.shape[0])
        ])
        if s + 1 == len(self.config.stages):
            return filtered
        G, L, h, w = filtered.shape
        return combine_maps(filtered.reshape(G * L, h, w), self.indexing[s + 1])

    def stage_input(self, pixels: np.ndarray, s: int) -> np.ndarray:
        x = pixels[None]
        for t in range(s):
            x = self.advance(x, t)
        return x

    def forward(self, pixels: np.ndarray) -> np.ndarray:
        return self.stage_input(pixels, len(self.config.stages))


def _check_images(ds: Dataset, expected: Optional[Tuple[int, int]] = None) -> Tuple[int, int]:
    try:
        shape = ds.image_shape
    except ShapeError as e:
        raise IncompatibleModelError(str(e)) from e
    if expected is not None and tuple(shape) != tuple(expected):
        raise IncompatibleModelError(f"images are {shape[0]}x{shape[1]}, model was fitted "
                                     f"on {expected[0]}x{expected[1]}")
    return shape


def _stage_scatters(inputs_of: Callable[[int], np.ndarray], n: int, s: int, groups: int,
                    map_shape: Tuple[int, int], cfg: PipelineConfig,
                    executor: ThreadPoolExecutor) -> List[ScatterMatrix]:
    stage = cfg.stages[s]
    per_image = patch_count(*map_shape, stage.patch)
    if cfg.patch_cap > 0:
        per_image = min(per_image, cfg.patch_cap)

    if n * per_image <= cfg.dense_limit:
        maps = list(executor.map(inputs_of, range(n)))
        return [scatter(assemble([m[g] for m in maps], stage.patch, cfg.patch_cap, cfg.seed, s + 1))
                for g in range(groups)]

    def accumulate(chunk: range) -> List[ScatterAccumulator]:
        accs = [ScatterAccumulator(stage.patch.size) for _ in range(groups)]
        for i in chunk:
            x = inputs_of(i)
            for g in range(groups):
                accs[g].add(centered_patches(x[g], stage.patch, cfg.patch_cap,
                                             patch_rng(cfg.seed, s + 1, i)))
        logger.debug("Stage %d: accumulated images %d-%d", s + 1, chunk.start, chunk.stop - 1)
        return accs

    chunks = [range(a, min(a + cfg.chunk_size, n)) for a in range(0, n, cfg.chunk_size)]
    totals = [ScatterAccumulator(stage.patch.size) for _ in range(groups)]
    # executor.map yields in chunk order
    for accs in executor.map(accumulate, chunks):
        for total, acc in zip(totals, accs):
            total.merge(acc)
    return [total.finalize() for total in totals]


def fit_features(train: Dataset, cfg: PipelineConfig, workers: int = 1) -> PcnModel:
    """Learn every stage's filter banks; the returned model has no classifier"""
    if len(train) == 0:
        raise EmptyDatasetError("no training images to learn filters from")
    shape = _check_images(train)
    cfg.validate(shape)

    S = len(cfg.stages)
    groups = cfg.input_groups()
    model = PcnModel(cfg, tuple(shape),
                     indexing=[None] + [cfg.indexing_matrix(s) for s in range(1, S)],
                     class_names=list(train.class_names))
    pixels = [img.pixels for img in train]
    map_shapes = [tuple(shape)] + cfg.stage_shapes(*shape)[:-1]
    cached = [p[None] for p in pixels] if cfg.memory == "materialize" else None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        for s, stage in enumerate(cfg.stages):
            started = time.monotonic()
            if cached is not None:
                inputs_of = cached.__getitem__
            else:
                inputs_of = lambda i, s=s: model.stage_input(pixels[i], s)

            scatters = _stage_scatters(inputs_of, len(pixels), s, groups[s], map_shapes[s],
                                       cfg, executor)
            model.banks.append(list(executor.map(
                lambda g, s=s: bank_from_scatter(scatters[g], stage.filters, stage.patch, s + 1,
                                                 None if s == 0 else g),
                range(groups[s]))))
            logger.info("Stage %d: learned %d bank(s) of %d filters in %.2fs",
                        s + 1, groups[s], stage.filters, time.monotonic() - started)

            if cached is not None and s + 1 < S:
                cached = list(executor.map(lambda x, s=s: model.advance(x, s), cached))
    return model


def check_mode(model: PcnModel, mode: Optional[str]) -> str:
    if mode is not None and mode != model.mode:
        raise IncompatibleModelError(f"model was fitted for {model.mode} output, "
                                     f"{mode} output requested")
    return model.mode


def featurize(model: PcnModel, pixels: np.ndarray):
    final = model.forward(pixels)
    if model.mode == "raw":
        return encode_raw(final)
    return encode_image(final, model.config.output.block)


def transform(model: PcnModel, ds: Dataset, workers: int = 1, mode: Optional[str] = None,
              progress: bool = False) -> list:
    check_mode(model, mode)
    if len(ds) == 0:
        return []
    _check_images(ds, model.image_shape)
    started = time.monotonic()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        features = list(tqdm(executor.map(lambda img: featurize(model, img.pixels), ds),
                             total=len(ds), desc="transform", unit="img", disable=not progress))
    logger.info("Transformed %d images into %d-dimensional features in %.2fs",
                len(features), model.feature_dim, time.monotonic() - started)
    return features


def fit(train: Dataset, cfg: PipelineConfig, workers: int = 1) -> PcnModel:
    model = fit_features(train, cfg, workers)
    features = transform(model, train, workers)
    model.classifier = Classifier.train(features, train.labels, cfg.classifier)
    return model


def _archive_arrays(model: PcnModel):
    arrays, bank_table = [], []
    for s, stage_banks in enumerate(model.banks):
        for bank in stage_banks:
            key = f"stage{s + 1}_group{bank.group or 0}"
            arrays += [(key + "/filters", bank.filters), (key + "/eigenvalues", bank.eigenvalues)]
            bank_table.append({"stage": s + 1, "group": bank.group,
                               "filters": key + "/filters", "eigenvalues": key + "/eigenvalues"})
    classifier = None
    if model.classifier is not None:
        clf = model.classifier
        arrays += [("classifier/weights", clf.weights), ("classifier/bias", clf.bias)]
        classifier = {"classes": [int(c) for c in clf.classes], "reg_c": clf.reg_c,
                      "train_meta": clf.train_meta}
    return arrays, bank_table, classifier


def to_bytes(model: PcnModel) -> bytes:
    arrays, bank_table, classifier = _archive_arrays(model)
    table, payload, offset = [], [], 0
    for name, array in arrays:
        data = np.ascontiguousarray(array, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(array.shape), "offset": offset,
                      "nbytes": len(data)})
        payload.append(data)
        offset += len(data)

    manifest = {
        "format_version": model.format_version,
        "config": canonical_text(model.config),
        "config_hash": config_hash(model.config),
        "mode": model.mode,
        "image_shape": list(model.image_shape),
        "class_names": list(model.class_names),
        "banks": bank_table,
        "classifier": classifier,
        "arrays": table,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _HEADER.pack(ARCHIVE_MAGIC, len(header)) + header + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def save(model: PcnModel, path: str):
    with open(path, "wb") as f:
        f.write(to_bytes(model))
    logger.info("Saved model archive to %s", path)


def from_bytes(data: bytes, source: str = "<bytes>") -> PcnModel:
    if len(data) < _HEADER.size + _DIGEST_SIZE:
        raise ChecksumError(f"{source}: archive truncated ({len(data)} bytes)")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{source}: checksum mismatch, archive is corrupt or truncated")
    magic, header_len = _HEADER.unpack_from(body)
    if magic != ARCHIVE_MAGIC:
        raise ArchiveError(f"{source}: not a model archive")
    manifest = json.loads(body[_HEADER.size:_HEADER.size + header_len].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArchiveVersionError(f"{source}: archive format {manifest.get('format_version')}, "
                                  f"this build reads {FORMAT_VERSION}")

    payload = body[_HEADER.size + header_len:]
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        values = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = values.reshape(entry["shape"]).astype(np.float64)

    cfg = parse_config_text(manifest["config"])
    S = len(cfg.stages)
    model = PcnModel(cfg, tuple(manifest["image_shape"]),
                     banks=[[] for _ in range(S)],
                     indexing=[None] + [cfg.indexing_matrix(s) for s in range(1, S)],
                     class_names=manifest["class_names"])
    for entry in manifest["banks"]:
        model.banks[entry["stage"] - 1].append(
            FilterBank(arrays[entry["filters"]], arrays[entry["eigenvalues"]], entry["stage"],
                       entry["group"]))
    for s, stage_banks in enumerate(model.banks):
        stage_banks.sort(key=lambda b: b.group or 0)
    _check_banks(model, source)

    clf = manifest["classifier"]
    if clf is not None:
        model.classifier = Classifier.LinearModel(arrays["classifier/weights"],
                                                  arrays["classifier/bias"], clf["classes"],
                                                  clf["reg_c"], clf["train_meta"])
    return model


def _check_banks(model: PcnModel, source: str):
    groups = model.config.input_groups()
    for s, stage in enumerate(model.config.stages):
        found = model.banks[s]
        if len(found) != groups[s]:
            raise ArchiveError(f"{source}: stage {s + 1} holds {len(found)} banks, "
                               f"config implies {groups[s]}")
        for bank in found:
            if bank.filters.shape != (stage.filters, stage.patch.k1, stage.patch.k2):
                raise ArchiveError(f"{source}: stage {s + 1} bank has shape {bank.filters.shape}")


def load(path: str) -> PcnModel:
    with open(path, "rb") as f:
        data = f.read()
    return from_bytes(data, path)
