"""Pipeline configuration: INI files with a [pipeline] section, one [stageN] section per
extraction stage and a [classifier] section. Parsed into frozen dataclasses, validated
exhaustively and canonicalized for hashing."""
import configparser
import hashlib
import os
import re
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

from Classifier import ClassifierConfig
from ConvPool import PoolSpec, parse_pool
from Errors import ConfigError, IndexingError
from Grouping import IndexingMatrix, parse_indexing, validate as validate_indexing
from OutputEncoding import MAX_HASH_BITS, OUTPUT_MODES, BlockSpec, block_count, feature_length
from PatchSampling import PatchSpec

PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "Configs")
MEMORY_MODES = ("stream", "materialize")


@dataclass(frozen=True)
class StageConfig:
    patch: PatchSpec
    filters: int
    pool: PoolSpec = PoolSpec()
    indexing: Optional[str] = None


@dataclass(frozen=True)
class OutputConfig:
    mode: str = "histogram"
    block: BlockSpec = BlockSpec(7, 7, 0.5)


@dataclass(frozen=True)
class PipelineConfig:
    stages: Tuple[StageConfig, ...]
    output: OutputConfig = OutputConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    seed: int = 0
    memory: str = "stream"
    patch_cap: int = 0
    dense_limit: int = 1_000_000
    chunk_size: int = 256

    @property
    def final_filters(self) -> int:
        return self.stages[-1].filters

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed, classifier=replace(self.classifier, seed=seed))

    def input_groups(self) -> List[int]:
        """Number of input groups seen by each stage; stage 1 sees the images as one group"""
        counts = [1]
        for s in range(1, len(self.stages)):
            width = counts[-1] * self.stages[s - 1].filters
            counts.append(parse_indexing(self.stages[s].indexing or "identity", width).group_count)
        return counts

    def subset_count(self, s: int) -> int:
        """Subsets produced by stage index s (0-based): input groups times filters"""
        return self.input_groups()[s] * self.stages[s].filters

    def indexing_matrix(self, s: int) -> IndexingMatrix:
        """Indexing matrix feeding stage index s >= 1"""
        width = self.subset_count(s - 1)
        return parse_indexing(self.stages[s].indexing or "identity", width)

    def stage_shapes(self, m: int, n: int) -> List[Tuple[int, int]]:
        """Map size leaving each stage"""
        shapes = []
        for stage in self.stages:
            m, n = stage.pool.output_shape(m, n)
            shapes.append((m, n))
        return shapes

    def feature_length(self, m: int, n: int) -> int:
        h, w = self.stage_shapes(m, n)[-1]
        G = self.input_groups()[-1]
        if self.output.mode == "raw":
            return G * self.final_filters * h * w
        return feature_length(G, block_count(h, w, self.output.block), self.final_filters)

    def problems(self, image_shape: Optional[Tuple[int, int]] = None) -> List[str]:
        found = []
        if not self.stages:
            return ["at least one extraction stage is required"]
        if self.output.mode not in OUTPUT_MODES:
            found.append(f"output mode '{self.output.mode}' not one of {', '.join(OUTPUT_MODES)}")
        if self.memory not in MEMORY_MODES:
            found.append(f"memory mode '{self.memory}' not one of {', '.join(MEMORY_MODES)}")
        if self.patch_cap < 0:
            found.append(f"patch_cap {self.patch_cap} must be >= 0")
        if self.dense_limit < 0:
            found.append(f"dense_limit {self.dense_limit} must be >= 0")
        if self.chunk_size < 1:
            found.append(f"chunk_size {self.chunk_size} must be >= 1")
        found += [f"output: {p}" for p in self.output.block.problems()]
        found += [f"classifier: {p}" for p in self.classifier.problems()]

        width = None
        for s, stage in enumerate(self.stages):
            name = f"stage{s + 1}"
            found += [f"{name}: {p}" for p in stage.patch.problems()]
            found += [f"{name}: {p}" for p in stage.pool.problems()]
            if not 1 <= stage.filters <= max(stage.patch.size, 1):
                found.append(f"{name}: filters {stage.filters} must lie in [1, {stage.patch.size}]")
            groups = 1
            if s == 0:
                if stage.indexing is not None:
                    found.append(f"{name}: the first stage takes no indexing matrix")
            elif width is not None:
                try:
                    ix = parse_indexing(stage.indexing or "identity", width)
                    validate_indexing(ix, width)
                    groups = ix.group_count
                except (ConfigError, IndexingError) as e:
                    found.append(f"{name}: indexing: {e}")
                    groups = None
            width = groups * stage.filters if groups is not None else None

        if self.output.mode == "histogram" and self.final_filters > MAX_HASH_BITS:
            found.append(f"histogram output supports at most {MAX_HASH_BITS} filters in the final "
                         f"stage, got {self.final_filters}; use output = raw")

        if image_shape is not None and not found:
            m, n = image_shape
            for s, stage in enumerate(self.stages):
                if not stage.patch.fits(m, n):
                    found.append(f"stage{s + 1}: patch {stage.patch.k1}x{stage.patch.k2} "
                                 f"larger than its {m}x{n} input")
                m, n = stage.pool.output_shape(m, n)
            if self.output.mode == "histogram" and not self.output.block.fits(m, n):
                b = self.output.block
                found.append(f"output: block {b.b1}x{b.b2} larger than final {m}x{n} maps")
        return found

    def validate(self, image_shape: Optional[Tuple[int, int]] = None) -> "PipelineConfig":
        found = self.problems(image_shape)
        if found:
            raise ConfigError(found)
        return self


def _pair(text: str) -> Tuple[int, int]:
    parts = re.split(r"\s*[x,]\s*", text.strip().lower())
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got '{text}'")
    return int(parts[0]), int(parts[1])


class _Reader:
    """Pulls typed values out of a ConfigParser, collecting every problem"""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser
        self.problems: List[str] = []

    def get(self, section: str, key: str, convert, default=None, required: bool = False):
        if not self.parser.has_option(section, key):
            if required:
                self.problems.append(f"[{section}] missing '{key}'")
            return default
        raw = self.parser.get(section, key)
        try:
            return convert(raw)
        except (ValueError, ConfigError) as e:
            self.problems.append(f"[{section}] {key} = {raw}: {e}")
            return default


def parse_config_text(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable config: {e}") from e
    reader = _Reader(parser)

    stage_names = sorted((s for s in parser.sections() if re.fullmatch(r"stage\d+", s)),
                         key=lambda s: int(s[5:]))
    expected = [f"stage{i + 1}" for i in range(len(stage_names))]
    if stage_names != expected:
        reader.problems.append(f"stage sections must be numbered stage1..stageN, got {stage_names}")
    if not stage_names:
        reader.problems.append("at least one [stageN] section is required")
    unknown = [s for s in parser.sections()
               if s not in ("pipeline", "classifier") and s not in stage_names]
    if unknown:
        reader.problems.append(f"unknown sections {unknown}")

    stages = []
    for name in stage_names:
        k1, k2 = reader.get(name, "patch", _pair, (1, 1), required=True)
        stages.append(StageConfig(
            patch=PatchSpec(k1, k2, reader.get(name, "interval", int, 1)),
            filters=reader.get(name, "filters", int, 0, required=True),
            pool=reader.get(name, "pool", parse_pool, PoolSpec()),
            indexing=parser.get(name, "indexing") if parser.has_option(name, "indexing") else None,
        ))

    section = "pipeline"
    if not parser.has_section(section):
        parser.add_section(section)
    b1, b2 = reader.get(section, "block", _pair, (7, 7))
    output = OutputConfig(
        mode=reader.get(section, "output", lambda v: v.strip().lower(), "histogram"),
        block=BlockSpec(b1, b2, reader.get(section, "overlap", float, 0.0)),
    )

    section = "classifier"
    if not parser.has_section(section):
        parser.add_section(section)
    defaults = ClassifierConfig()
    classifier = ClassifierConfig(
        reg_c=reader.get(section, "reg_c", float, defaults.reg_c),
        epochs=reader.get(section, "epochs", int, defaults.epochs),
        seed=reader.get(section, "seed", int, defaults.seed),
        tol=reader.get(section, "tol", float, defaults.tol),
        batch_size=reader.get(section, "batch_size", int, defaults.batch_size),
    )

    base = PipelineConfig(stages=())
    cfg = PipelineConfig(
        stages=tuple(stages),
        output=output,
        classifier=classifier,
        seed=reader.get("pipeline", "seed", int, base.seed),
        memory=reader.get("pipeline", "memory", lambda v: v.strip().lower(), base.memory),
        patch_cap=reader.get("pipeline", "patch_cap", int, base.patch_cap),
        dense_limit=reader.get("pipeline", "dense_limit", int, base.dense_limit),
        chunk_size=reader.get("pipeline", "chunk_size", int, base.chunk_size),
    )
    if reader.problems:
        raise ConfigError(reader.problems + cfg.problems())
    return cfg.validate()


def resolve_config_path(name_or_path: str) -> str:
    if os.path.isfile(name_or_path):
        return name_or_path
    for candidate in (name_or_path, name_or_path + ".cfg"):
        path = os.path.join(PRESET_DIR, candidate)
        if os.path.isfile(path):
            return path
    raise FileNotFoundError(f"no config file or preset named '{name_or_path}'")


def list_presets() -> List[str]:
    return sorted(f[:-4] for f in os.listdir(PRESET_DIR) if f.endswith(".cfg"))


def load_config(name_or_path: str) -> PipelineConfig:
    with open(resolve_config_path(name_or_path), "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def canonical_text(cfg: PipelineConfig) -> str:
    lines = [
        "[pipeline]",
        f"seed = {cfg.seed}",
        f"output = {cfg.output.mode}",
        f"block = {cfg.output.block.b1}x{cfg.output.block.b2}",
        f"overlap = {cfg.output.block.overlap_ratio!r}",
        f"memory = {cfg.memory}",
        f"patch_cap = {cfg.patch_cap}",
        f"dense_limit = {cfg.dense_limit}",
        f"chunk_size = {cfg.chunk_size}",
        "",
    ]
    for s, stage in enumerate(cfg.stages):
        lines += [
            f"[stage{s + 1}]",
            f"patch = {stage.patch.k1}x{stage.patch.k2}",
            f"interval = {stage.patch.k}",
            f"filters = {stage.filters}",
            f"pool = {stage.pool.describe()}",
        ]
        if s > 0:
            lines.append(f"indexing = {cfg.indexing_matrix(s).to_text()}")
        lines.append("")
    c = cfg.classifier
    lines += [
        "[classifier]",
        f"reg_c = {c.reg_c!r}",
        f"epochs = {c.epochs}",
        f"seed = {c.seed}",
        f"tol = {c.tol!r}",
        f"batch_size = {c.batch_size}",
        "",
    ]
    return "\n".join(lines)


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RuntimeSettings:
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    seed: Optional[int] = None
    log_level: str = "INFO"
    report_dir: str = "Reports"


def runtime_settings() -> RuntimeSettings:
    """Defaults from PCN_* environment variables (a .env file is loaded by the launcher)"""
    env = os.environ
    seed = env.get("PCN_SEED")
    return RuntimeSettings(
        workers=int(env.get("PCN_WORKERS", os.cpu_count() or 1)),
        seed=int(seed) if seed not in (None, "") else None,
        log_level=env.get("PCN_LOG_LEVEL", "INFO").upper(),
        report_dir=env.get("PCN_REPORT_DIR", "Reports"),
    )
