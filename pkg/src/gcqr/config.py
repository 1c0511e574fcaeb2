"""Pipeline configuration: TOML loading, validation, and dataset presets.

Relative paths in a config file are resolved against the file's directory.
Path existence is checked at run start, not at load time, so presets can
ship with placeholder paths.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from gcqr.embeddings import EmbedderSpec
from gcqr.enrichment import EnrichmentConfig, ExtractorSpec
from gcqr.filtering import HISTORY_AGGREGATIONS, MAX_DISTANCE

EMBEDDER_STAGES = ("rerank1", "rerank2", "keyword", "filter", "answer")
SWEEP_AXES = ("guided_n", "keyword_top_docs", "keyword_span", "filter_threshold")

PRESETS = ("cast19", "cast20")


class ConfigError(ValueError):
    """Structurally invalid or incomplete pipeline configuration."""


@dataclass
class PipelineConfig:
    corpus_path: Path
    queries_path: Path
    output_dir: Path
    embedders: dict[str, EmbedderSpec]
    enrichment: EnrichmentConfig
    filter_threshold: float
    qrels_path: Path | None = None
    corpus_format: str | None = None  # inferred from the file suffix when None
    retriever: str = "bm25"
    guided_n: int = 2000
    intermediate_keep: int = 100
    final_keep: int = 10
    bm25_k1: float = 0.9
    bm25_b: float = 0.4
    run_depth: int = 1000
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    history_aggregation: str = MAX_DISTANCE
    mrr_rel_threshold: int = 1
    ndcg_k: int = 3
    workers: int | None = None
    rewriter_endpoint: str | None = None
    rewriter_timeout: float = 5.0

    def __post_init__(self):
        if self.retriever not in ("bm25", "dense"):
            raise ConfigError(f"retriever must be bm25 or dense, got {self.retriever!r}")
        if self.guided_n < 1 or self.final_keep < 1:
            raise ConfigError("guided_n and final_keep must be >= 1")
        if self.intermediate_keep < self.final_keep:
            raise ConfigError("intermediate_keep must be >= final_keep")
        if self.filter_threshold < 0:
            raise ConfigError("filter_threshold must be >= 0")
        if self.history_aggregation not in HISTORY_AGGREGATIONS:
            raise ConfigError(
                f"history_aggregation must be one of {HISTORY_AGGREGATIONS}"
            )
        missing = [s for s in EMBEDDER_STAGES if s not in self.embedders]
        if missing:
            raise ConfigError(f"embedders map is missing stages: {', '.join(missing)}")
        if self.retriever == "dense" and "retrieval" not in self.embedders:
            raise ConfigError("dense retrieval requires an embedders.retrieval entry")

    def resolved_corpus_format(self) -> str:
        if self.corpus_format:
            return self.corpus_format
        return "tsv" if self.corpus_path.suffix == ".tsv" else "jsonl"

    def with_overrides(
        self,
        filter_threshold: float | None = None,
        guided_n: int | None = None,
        span: int | None = None,
        top_docs: int | None = None,
        output_dir: Path | None = None,
    ) -> PipelineConfig:
        """Targeted overrides used by the CLI flags and the sweep harness."""
        cfg = self
        if filter_threshold is not None:
            cfg = replace(cfg, filter_threshold=filter_threshold)
        if guided_n is not None:
            cfg = replace(cfg, guided_n=guided_n)
        if span is not None:
            cfg = replace(cfg, enrichment=replace(cfg.enrichment, keyword_span=span))
        if top_docs is not None:
            cfg = replace(cfg, enrichment=replace(cfg.enrichment, keyword_top_docs=top_docs))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=Path(output_dir))
        return cfg

    def validate_paths(self) -> None:
        """Check referenced input files exist; called at run start."""
        for label, path in (
            ("corpus", self.corpus_path),
            ("queries", self.queries_path),
            ("qrels", self.qrels_path),
        ):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{label} path does not exist: {path}")


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _require(section: dict, section_name: str, key: str):
    if key not in section:
        raise ConfigError(f"missing required key {key!r} in [{section_name}]")
    return section[key]


def _embedder_from_table(stage: str, table: dict) -> EmbedderSpec:
    try:
        return EmbedderSpec(
            kind=_require(table, f"embedders.{stage}", "kind"),
            dimension=table.get("dimension"),
            endpoint=table.get("endpoint"),
            model_name=table.get("model_name"),
            seed=table.get("seed"),
        )
    except ValueError as exc:
        raise ConfigError(f"[embedders.{stage}]: {exc}") from exc


def config_from_dict(data: dict, base_dir: Path | None = None) -> PipelineConfig:
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def resolve(raw: str) -> Path:
        path = Path(raw)
        return path if path.is_absolute() else base / path

    corpus = _section(data, "corpus")
    queries = _section(data, "queries")
    qrels = _section(data, "qrels")
    retrieval = _section(data, "retrieval")
    enrichment = _section(data, "enrichment")
    filter_table = _section(data, "filter")
    evaluation = _section(data, "evaluation")
    output = _section(data, "output")
    embedder_tables = _section(data, "embedders")
    extractor_table = _section(data, "extractor")
    rewriter = _section(data, "rewriter")

    embedders = {
        stage: _embedder_from_table(stage, table)
        for stage, table in embedder_tables.items()
        if isinstance(table, dict)
    }

    ngram_low = enrichment.get("ngram_low", 1)
    ngram_high = enrichment.get("ngram_high", 1)
    try:
        enrichment_cfg = EnrichmentConfig(
            keyword_top_docs=_require(enrichment, "enrichment", "keyword_top_docs"),
            keyword_span=_require(enrichment, "enrichment", "keyword_span"),
            answer_top_docs=_require(enrichment, "enrichment", "answer_top_docs"),
            ngram_range=(ngram_low, ngram_high),
        )
        extractor = ExtractorSpec(
            kind=extractor_table.get("kind", "builtin"),
            endpoint=extractor_table.get("endpoint"),
            timeout=extractor_table.get("timeout", 30.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    qrels_raw = qrels.get("path")
    return PipelineConfig(
        corpus_path=resolve(_require(corpus, "corpus", "path")),
        corpus_format=corpus.get("format"),
        queries_path=resolve(_require(queries, "queries", "path")),
        qrels_path=resolve(qrels_raw) if qrels_raw else None,
        output_dir=resolve(output.get("dir", "out")),
        retriever=retrieval.get("retriever", "bm25"),
        guided_n=retrieval.get("guided_n", 2000),
        intermediate_keep=retrieval.get("intermediate_keep", 100),
        final_keep=retrieval.get("final_keep", 10),
        bm25_k1=retrieval.get("bm25_k1", 0.9),
        bm25_b=retrieval.get("bm25_b", 0.4),
        run_depth=retrieval.get("run_depth", 1000),
        embedders=embedders,
        enrichment=enrichment_cfg,
        extractor=extractor,
        filter_threshold=_require(filter_table, "filter", "threshold"),
        history_aggregation=filter_table.get("history_aggregation", MAX_DISTANCE),
        mrr_rel_threshold=evaluation.get("mrr_rel_threshold", 1),
        ndcg_k=evaluation.get("ndcg_k", 3),
        workers=data.get("workers"),
        rewriter_endpoint=rewriter.get("endpoint"),
        rewriter_timeout=rewriter.get("timeout", 5.0),
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


def load_preset(name: str, base_dir: Path | None = None) -> PipelineConfig:
    """Load one of the bundled dataset presets (paths are placeholders)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("gcqr.presets").joinpath(f"{name}.toml").read_text("utf-8")
    data = tomllib.loads(text)
    return config_from_dict(data, base_dir=base_dir)


def config_to_dict(config: PipelineConfig) -> dict:
    """JSON-friendly snapshot of the effective configuration."""
    embedders = {}
    for stage, spec in config.embedders.items():
        embedders[stage] = {
            "kind": spec.kind,
            "dimension": spec.dimension,
            "endpoint": spec.endpoint,
            "model_name": spec.model_name,
            "seed": spec.seed,
        }
    return {
        "corpus_path": str(config.corpus_path),
        "corpus_format": config.resolved_corpus_format(),
        "queries_path": str(config.queries_path),
        "qrels_path": str(config.qrels_path) if config.qrels_path else None,
        "output_dir": str(config.output_dir),
        "retriever": config.retriever,
        "guided_n": config.guided_n,
        "intermediate_keep": config.intermediate_keep,
        "final_keep": config.final_keep,
        "bm25_k1": config.bm25_k1,
        "bm25_b": config.bm25_b,
        "run_depth": config.run_depth,
        "embedders": embedders,
        "enrichment": {
            "keyword_top_docs": config.enrichment.keyword_top_docs,
            "keyword_span": config.enrichment.keyword_span,
            "answer_top_docs": config.enrichment.answer_top_docs,
            "ngram_range": list(config.enrichment.ngram_range),
        },
        "extractor": {
            "kind": config.extractor.kind,
            "endpoint": config.extractor.endpoint,
        },
        "filter_threshold": config.filter_threshold,
        "history_aggregation": config.history_aggregation,
        "mrr_rel_threshold": config.mrr_rel_threshold,
        "ndcg_k": config.ndcg_k,
        "rewriter_endpoint": config.rewriter_endpoint,
    }
