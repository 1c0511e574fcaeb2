"""Guided conversational query reformulation toolkit."""

from gcqr.corpus import (
    CorpusError,
    CorpusIndex,
    bm25_retrieve,
    build_index,
    ingest_corpus,
    load_index,
    save_index,
    tokenize,
)
from gcqr.embeddings import (
    DeterministicEmbedder,
    Embedder,
    EmbedderSpec,
    EmbeddingVector,
    HttpEmbedder,
    cosine_similarity,
    embed,
)
from gcqr.enrichment import (
    AnswerSpan,
    EnrichmentConfig,
    ExtractorSpec,
    KeywordCandidate,
    augment_keywords,
    extract_answer,
    extract_keywords,
    generate_answers,
    unify_answers,
)
from gcqr.evaluation import (
    Qrels,
    RunEntry,
    keyword_precision,
    mrr,
    ndcg_at_k,
    parse_qrels,
    parse_run,
    write_run,
)
from gcqr.filtering import (
    EnrichmentItem,
    ReformulatedQuery,
    filter_items,
    filter_score,
    history_score,
    query_score,
    unify,
)
from gcqr.config import (
    ConfigError,
    PipelineConfig,
    config_from_dict,
    load_config,
    load_preset,
)
from gcqr.models import ConversationTurn, Document, RankedList, turn_key_str
from gcqr.pipeline import (
    cmd_evaluate,
    cmd_index,
    cmd_reformulate,
    cmd_sweep,
    load_turns,
)
from gcqr.retrieval import (
    dense_retrieve,
    rerank_once,
    retrieve_guided,
    two_stage_rerank,
    two_stage_rerank_with_intermediate,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerSpan",
    "ConfigError",
    "ConversationTurn",
    "CorpusError",
    "CorpusIndex",
    "PipelineConfig",
    "DeterministicEmbedder",
    "Document",
    "Embedder",
    "EmbedderSpec",
    "EmbeddingVector",
    "EnrichmentConfig",
    "EnrichmentItem",
    "ExtractorSpec",
    "HttpEmbedder",
    "KeywordCandidate",
    "Qrels",
    "RankedList",
    "ReformulatedQuery",
    "RunEntry",
    "augment_keywords",
    "bm25_retrieve",
    "build_index",
    "cmd_evaluate",
    "cmd_index",
    "cmd_reformulate",
    "cmd_sweep",
    "config_from_dict",
    "cosine_similarity",
    "dense_retrieve",
    "embed",
    "extract_answer",
    "extract_keywords",
    "filter_items",
    "filter_score",
    "generate_answers",
    "history_score",
    "ingest_corpus",
    "keyword_precision",
    "load_config",
    "load_index",
    "load_preset",
    "load_turns",
    "mrr",
    "ndcg_at_k",
    "parse_qrels",
    "parse_run",
    "query_score",
    "rerank_once",
    "retrieve_guided",
    "save_index",
    "tokenize",
    "turn_key_str",
    "two_stage_rerank",
    "two_stage_rerank_with_intermediate",
    "unify",
    "unify_answers",
    "write_run",
]
