"""Command-line surface: train, eval, featurize, inspect, bench and select."""
import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy
import sklearn
from PIL import Image

import Classifier
import Pipeline
from Config import (PipelineConfig, canonical_text, config_hash, list_presets, load_config,
                    runtime_settings)
from DatasetIO import Dataset, SplitSpec, load_amat, load_idx, load_image_dir, split
from Errors import (ArchiveError, ConfigError, DatasetError, EmptyDatasetError,
                    EmptyEvaluationError, EncodingError, IncompatibleModelError, IndexingError,
                    ShapeError)
from FilterLearning import FilterBank, export_banks
from OutputEncoding import write_svmlight
from Reports import ReportManager

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INCOMPATIBLE = 4
EXIT_EMPTY_EVAL = 5

REPORT_FORMATS = ("table", "csv", "json")


@dataclass
class RunReport:
    command: str
    config_hash: str
    feature_dim: int
    accuracy: Optional[float] = None
    evaluated_on: Optional[str] = None
    train_images: int = 0
    test_images: int = 0
    filter_seconds: float = 0.0
    transform_seconds: float = 0.0
    classifier_seconds: float = 0.0
    test_seconds_per_sample: Optional[float] = None
    confusion_matrix_path: Optional[str] = None
    model_path: Optional[str] = None
    environment: str = ""

    def as_dict(self) -> Dict:
        return asdict(self)


def environment_note(workers: int) -> str:
    return (f"python {platform.python_version()}, numpy {np.__version__}, scipy {scipy.__version__}, "
            f"scikit-learn {sklearn.__version__}, {platform.machine() or 'unknown'}, "
            f"workers={workers}")


def format_report(report: Dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, sort_keys=True)
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(report), lineterminator="\n")
        writer.writeheader()
        writer.writerow(report)
        return buffer.getvalue().rstrip("\n")
    width = max(len(k) for k in report)
    lines = []
    for key, value in report.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key.ljust(width)}  {'-' if value is None else value}")
    return "\n".join(lines)


def _pair(text: str):
    h, w = text.lower().split("x")
    return int(h), int(w)


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="overrides the config seed (default PCN_SEED)")
    common.add_argument("--workers", type=int, help="parallelism cap (default PCN_WORKERS or cores)")
    common.add_argument("--report-format", choices=REPORT_FORMATS, default="table")
    common.add_argument("--report-dir", help="report history directory (default PCN_REPORT_DIR)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING ... (default PCN_LOG_LEVEL)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--train-images")
    data.add_argument("--train-labels")
    data.add_argument("--test-images")
    data.add_argument("--test-labels")
    data.add_argument("--train-amat", help="training rows as text (basic MNIST .amat)")
    data.add_argument("--test-amat", help="test rows as text (basic MNIST .amat)")
    data.add_argument("--data-dir", help="class-per-folder images; train/ and test/ subfolders "
                                         "are used when present")
    data.add_argument("--crop", type=_pair, help="center crop HxW for directory images")
    data.add_argument("--skip-undecodable", action="store_true")
    data.add_argument("--train-count", type=int, help="stratified subsample of the training set")
    data.add_argument("--test-count", type=int, help="stratified subsample of the test set")

    parser = argparse.ArgumentParser(prog="pcn", description="PCA-based convolutional network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, data], help="fit filters and classifier")
    p.add_argument("--config", required=True, help="config file or preset name")
    p.add_argument("--model", required=True, help="where to write the model archive")
    p.add_argument("--out", help="directory for the confusion matrix and training log")

    p = sub.add_parser("eval", parents=[common, data], help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="directory for the confusion matrix")

    p = sub.add_parser("featurize", parents=[common, data], help="write svmlight features")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="svmlight output file")

    p = sub.add_parser("inspect", parents=[common], help="export filter image grids")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scale", type=int, default=8, help="pixels per filter tap")

    p = sub.add_parser("bench", parents=[common, data], help="phase timings against N")
    p.add_argument("--config", required=True)
    p.add_argument("--sizes", type=_int_list, default=[250, 500, 1000, 2000])
    p.add_argument("--out", help="CSV file (also printed)")

    p = sub.add_parser("select", parents=[common, data], help="grid-search L1/L2 on a "
                                                              "validation split")
    p.add_argument("--config", required=True)
    p.add_argument("--l1", type=_int_list, required=True, help="candidate first-stage filter counts")
    p.add_argument("--l2", type=_int_list, help="candidate second-stage filter counts")
    p.add_argument("--val-per-class", type=int, default=5)
    p.add_argument("--out", help="where to write the best config")

    sub.add_parser("presets", help="list bundled configs")
    return parser


def _subsample(ds: Dataset, count: Optional[int], seed: int) -> Dataset:
    if count is None or count >= len(ds):
        return ds
    kept, _ = split(ds, SplitSpec(train_frac=count / len(ds), seed=seed))
    return kept


def _load_part(args, part: str, seed: int) -> Optional[Dataset]:
    images = getattr(args, f"{part}_images")
    labels = getattr(args, f"{part}_labels")
    amat = getattr(args, f"{part}_amat")
    ds = None
    if amat:
        if images or labels:
            raise ConfigError(f"--{part}-amat replaces --{part}-images and --{part}-labels")
        ds = load_amat(amat)
    elif images or labels:
        if not (images and labels):
            raise ConfigError(f"--{part}-images and --{part}-labels go together")
        ds = load_idx(images, labels)
    elif args.data_dir:
        root = os.path.join(args.data_dir, part)
        if not os.path.isdir(root):
            root = args.data_dir if part == "train" else None
        if root is not None:
            ds = load_image_dir(root, skip_undecodable=args.skip_undecodable, crop=args.crop)
    if ds is None:
        return None
    return _subsample(ds, getattr(args, f"{part}_count"), seed)


def _require_train(args, seed: int) -> Dataset:
    train = _load_part(args, "train", seed)
    if train is None:
        raise ConfigError("no training data: give --train-images/--train-labels, --train-amat "
                          "or --data-dir")
    return train


def _resolve_config(args, seed: Optional[int], image_shape=None) -> PipelineConfig:
    cfg = load_config(args.config)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg.validate(image_shape)


def _run_name(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _write_confusion(result: Dict, path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["true\\predicted"] + result["classes"])
        for c, row in zip(result["classes"], result["confusion_matrix"]):
            writer.writerow([c] + [int(v) for v in row])


def _timed_eval(model: Pipeline.PcnModel, test: Dataset, workers: int):
    started = time.perf_counter()
    features = Pipeline.transform(model, test, workers, progress=True)
    result = Classifier.evaluate(model.classifier, features, test.labels)
    return result, (time.perf_counter() - started) / len(test)


def cmd_train(args, settings) -> RunReport:
    seed = args.seed if args.seed is not None else settings.seed
    # configs are validated before any dataset is read
    cfg = _resolve_config(args, seed)
    train = _require_train(args, cfg.seed)
    test = _load_part(args, "test", cfg.seed)
    cfg.validate(train.image_shape)

    started = time.perf_counter()
    model = Pipeline.fit_features(train, cfg, settings.workers)
    filter_seconds = time.perf_counter() - started

    started = time.perf_counter()
    features = Pipeline.transform(model, train, settings.workers, progress=True)
    transform_seconds = time.perf_counter() - started

    started = time.perf_counter()
    model.classifier = Classifier.train(features, train.labels, cfg.classifier)
    classifier_seconds = time.perf_counter() - started
    Pipeline.save(model, args.model)

    report = RunReport("train", config_hash(cfg), model.feature_dim, train_images=len(train),
                       filter_seconds=filter_seconds, transform_seconds=transform_seconds,
                       classifier_seconds=classifier_seconds, model_path=args.model,
                       environment=environment_note(settings.workers))
    if test is not None and len(test):
        result, per_sample = _timed_eval(model, test, settings.workers)
        report.evaluated_on, report.test_images = "test", len(test)
        report.test_seconds_per_sample = per_sample
    else:
        result = Classifier.evaluate(model.classifier, features, train.labels)
        report.evaluated_on = "train"
    report.accuracy = result["accuracy"]

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.confusion_matrix_path = os.path.join(args.out, "confusion_matrix.csv")
        _write_confusion(result, report.confusion_matrix_path)
        Classifier.write_training_log(model.classifier, os.path.join(args.out, "training_log.csv"))
    return report


def cmd_eval(args, settings) -> RunReport:
    model = Pipeline.load(args.model)
    if model.classifier is None:
        raise IncompatibleModelError(f"{args.model} holds no classifier")
    try:
        test = _load_part(args, "test", model.config.seed)
    except EmptyDatasetError as e:
        raise EmptyEvaluationError(str(e)) from e
    if test is None or len(test) == 0:
        raise EmptyEvaluationError("the evaluation set holds no images")

    result, per_sample = _timed_eval(model, test, settings.workers)
    if len(test) < 100:
        logger.warning("Per-sample test time averaged over only %d images", len(test))
    out_dir = args.out or os.path.dirname(os.path.abspath(args.model))
    os.makedirs(out_dir, exist_ok=True)
    confusion_path = os.path.join(out_dir, f"{_run_name(args.model)}_confusion_matrix.csv")
    _write_confusion(result, confusion_path)
    return RunReport("eval", config_hash(model.config), model.feature_dim,
                     accuracy=result["accuracy"], evaluated_on="test", test_images=len(test),
                     test_seconds_per_sample=per_sample, confusion_matrix_path=confusion_path,
                     model_path=args.model, environment=environment_note(settings.workers))


def cmd_featurize(args, settings) -> RunReport:
    model = Pipeline.load(args.model)
    ds = _load_part(args, "test", model.config.seed)
    if ds is None:
        ds = _require_train(args, model.config.seed)
    started = time.perf_counter()
    features = Pipeline.transform(model, ds, settings.workers, progress=True)
    elapsed = time.perf_counter() - started
    write_svmlight(features, ds.labels, args.out)
    logger.info("Wrote %d feature vectors to %s", len(features), args.out)
    return RunReport("featurize", config_hash(model.config), model.feature_dim,
                     test_images=len(ds), transform_seconds=elapsed, model_path=args.model,
                     environment=environment_note(settings.workers))


def normalize_filter(kernel: np.ndarray) -> np.ndarray:
    """Min-max to 0..255; a constant filter becomes mid-gray"""
    low, high = float(kernel.min()), float(kernel.max())
    if high - low <= 0.0:
        return np.full(kernel.shape, 128, dtype=np.uint8)
    return np.round((kernel - low) / (high - low) * 255.0).astype(np.uint8)


def filter_grid(bank: FilterBank, scale: int = 8, columns: int = 8, gap: int = 2) -> np.ndarray:
    L = len(bank)
    k1, k2 = bank.kernel_shape
    cols = min(L, columns)
    rows = -(-L // cols)
    tile_h, tile_w = k1 * scale, k2 * scale
    grid = np.zeros((rows * (tile_h + gap) + gap, cols * (tile_w + gap) + gap), dtype=np.uint8)
    for l, kernel in enumerate(bank.filters):
        r, c = divmod(l, cols)
        tile = np.kron(normalize_filter(kernel), np.ones((scale, scale), dtype=np.uint8))
        top, left = gap + r * (tile_h + gap), gap + c * (tile_w + gap)
        grid[top:top + tile_h, left:left + tile_w] = tile
    return grid


def cmd_inspect(args, settings) -> List[str]:
    model = Pipeline.load(args.model)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for bank in model.all_banks():
        name = f"stage{bank.stage}.png" if bank.group is None \
            else f"stage{bank.stage}_group{bank.group:02d}.png"
        path = os.path.join(args.out, name)
        Image.fromarray(filter_grid(bank, args.scale)).save(path)
        written.append(path)
    npz_path = os.path.join(args.out, "filters.npz")
    export_banks(model.all_banks(), npz_path)
    written.append(npz_path)
    logger.info("Wrote %d filter grids to %s", len(written) - 1, args.out)
    return written


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    if len(x) < 2:
        return None
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sum((y - (slope * x + intercept)) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if total == 0.0 else 1.0 - residual / total


def cmd_bench(args, settings) -> Dict:
    if not args.sizes:
        raise ConfigError("bench needs at least one size")
    if any(n < 1 for n in args.sizes):
        raise ConfigError(f"sizes must be positive, got {args.sizes}")
    seed = args.seed if args.seed is not None else settings.seed
    cfg = _resolve_config(args, seed)
    train = _require_train(args, cfg.seed)
    cfg.validate(train.image_shape)
    if max(args.sizes) > len(train):
        raise ConfigError(f"largest size {max(args.sizes)} exceeds the {len(train)} "
                          f"training images")

    rows = []
    for n in args.sizes:
        subset = _subsample(train, n, cfg.seed)
        started = time.perf_counter()
        model = Pipeline.fit_features(subset, cfg, settings.workers)
        filter_seconds = time.perf_counter() - started
        started = time.perf_counter()
        features = Pipeline.transform(model, subset, settings.workers)
        transform_seconds = time.perf_counter() - started
        started = time.perf_counter()
        Classifier.train(features, subset.labels, cfg.classifier)
        classifier_seconds = time.perf_counter() - started
        rows.append({"n": len(subset), "filter_seconds": filter_seconds,
                     "transform_seconds": transform_seconds,
                     "classifier_seconds": classifier_seconds,
                     "feature_dim": model.feature_dim, "config_hash": config_hash(cfg)})
        logger.info("Bench N=%d: filters %.2fs, transform %.2fs, classifier %.2fs",
                    len(subset), filter_seconds, transform_seconds, classifier_seconds)

    r2 = linear_fit_r2([r["n"] for r in rows], [r["transform_seconds"] for r in rows])
    if r2 is not None:
        logger.info("Transform time vs N: linear fit R^2 = %.4f", r2)
    if args.out:
        with open(args.out, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return {"rows": rows, "transform_r2": r2}


def _with_filters(cfg: PipelineConfig, l1: int, l2: Optional[int]) -> PipelineConfig:
    stages = list(cfg.stages)
    stages[0] = replace(stages[0], filters=l1)
    if l2 is not None:
        stages[1] = replace(stages[1], filters=l2)
    return replace(cfg, stages=tuple(stages))


def cmd_select(args, settings) -> Dict:
    seed = args.seed if args.seed is not None else settings.seed
    base = _resolve_config(args, seed)
    if args.l2 and len(base.stages) < 2:
        raise ConfigError("--l2 needs a config with at least two stages")
    data = _require_train(args, base.seed)
    fit_part, val_part = split(data, SplitSpec(per_class_count=args.val_per_class, seed=base.seed))
    if len(val_part) == 0:
        raise EmptyEvaluationError("the validation split holds no images")

    trials = []
    for l1 in args.l1:
        for l2 in (args.l2 or [None]):
            cfg = _with_filters(base, l1, l2)
            found = cfg.problems(data.image_shape)
            if found:
                logger.warning("Skipping L1=%s L2=%s: %s", l1, l2, "; ".join(found))
                continue
            model = Pipeline.fit(fit_part, cfg, settings.workers)
            features = Pipeline.transform(model, val_part, settings.workers)
            accuracy = Classifier.evaluate(model.classifier, features, val_part.labels)["accuracy"]
            logger.info("L1=%s L2=%s: validation accuracy %.4f", l1, l2, accuracy)
            trials.append({"l1": l1, "l2": l2, "accuracy": accuracy, "config": cfg})
    if not trials:
        raise ConfigError("no candidate in the grid is a valid config")

    best = max(trials, key=lambda t: t["accuracy"])
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(canonical_text(best["config"]))
    return {"trials": [{k: t[k] for k in ("l1", "l2", "accuracy")} for t in trials],
            "best": {"l1": best["l1"], "l2": best["l2"], "accuracy": best["accuracy"],
                     "config_hash": config_hash(best["config"])}}


def _print_rows(rows: List[Dict], fmt: str):
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        print(buffer.getvalue().rstrip("\n"))
    elif fmt == "json":
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    else:
        print("\n\n".join(format_report(row, "table") for row in rows))


def _emit(args, report: Dict, run_name: Optional[str], settings):
    print(format_report(report, args.report_format))
    if run_name:
        manager = ReportManager(run_name, args.report_dir or settings.report_dir)
        best = manager.update_best(report)
        if best is not None and report.get("accuracy") is not None:
            logger.info("Best recorded accuracy for %s: %.4f", run_name, best["accuracy"])


def run(args) -> int:
    settings = runtime_settings()
    level = (args.log_level or settings.log_level).upper()
    try:
        logging.getLogger().setLevel(level)
    except ValueError:
        raise ConfigError(f"unknown log level '{level}'") from None
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError(f"--workers {args.workers} must be >= 1")
        settings = replace(settings, workers=args.workers)

    if args.command == "train":
        _emit(args, cmd_train(args, settings).as_dict(), _run_name(args.config), settings)
    elif args.command == "eval":
        _emit(args, cmd_eval(args, settings).as_dict(), _run_name(args.model), settings)
    elif args.command == "featurize":
        _emit(args, cmd_featurize(args, settings).as_dict(), None, settings)
    elif args.command == "inspect":
        for path in cmd_inspect(args, settings):
            print(path)
    elif args.command == "bench":
        result = cmd_bench(args, settings)
        _print_rows([dict(row, transform_r2=result["transform_r2"]) for row in result["rows"]],
                    args.report_format)
    elif args.command == "select":
        result = cmd_select(args, settings)
        _print_rows(result["trials"], args.report_format)
        print()
        print(format_report(result["best"], args.report_format))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "presets":
        for name in list_presets():
            print(name)
        return EXIT_OK
    try:
        return run(args)
    except EmptyEvaluationError as e:
        logger.error("Empty evaluation set: %s", e)
        return EXIT_EMPTY_EVAL
    except (ConfigError, IndexingError, EncodingError) as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except (IncompatibleModelError, ShapeError) as e:
        logger.error("Incompatible input: %s", e)
        return EXIT_INCOMPATIBLE
    except (DatasetError, ArchiveError, OSError) as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except Exception:
        logger.exception("Unexpected failure")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
