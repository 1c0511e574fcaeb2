"""Guided document retrieval: initial top-N retrieval, then two re-ranking
passes with distinct embedders, keeping a small final set.

The final guided documents are the signal source for keyword augmentation
and answer generation downstream.
"""

from __future__ import annotations

import logging
from typing import Mapping

from gcqr.corpus import CorpusIndex, bm25_retrieve
from gcqr.embeddings import Embedder, EmbedderSpec, as_embedder, cosine_similarity
from gcqr.models import ConversationTurn, Document, RankedList

log = logging.getLogger(__name__)

DEFAULT_GUIDED_N = 2000
DEFAULT_INTERMEDIATE_KEEP = 100
DEFAULT_FINAL_KEEP = 10

EMBED_TOKEN_LIMIT = 512


def truncate_for_embedding(text: str, max_tokens: int = EMBED_TOKEN_LIMIT) -> str:
    """Cap embedding input at the first ``max_tokens`` whitespace tokens."""
    words = text.split()
    if len(words) <= max_tokens:
        return text
    log.debug("truncating %d-token text to %d tokens before embedding", len(words), max_tokens)
    return " ".join(words[:max_tokens])


def dense_retrieve(
    index: CorpusIndex,
    query_text: str,
    k: int,
    embedder: Embedder | EmbedderSpec,
    query_key: tuple[str, int] = ("", 0),
) -> RankedList:
    """Rank every document by cosine to the query embedding; top k.

    The dense alternative to BM25 for first-stage retrieval. Ties are broken
    by ascending doc_id, mirroring the lexical retriever.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    provider = as_embedder(embedder)
    query_vec = provider.embed_one(truncate_for_embedding(query_text))
    doc_texts = [truncate_for_embedding(doc.text) for doc in index.doc_table]
    doc_vecs = provider.embed(doc_texts)
    scored = [
        (doc.doc_id, cosine_similarity(query_vec, vec))
        for doc, vec in zip(index.doc_table, doc_vecs)
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return RankedList(query_key=query_key, entries=scored[:k])


def retrieve_guided(
    index: CorpusIndex,
    turn: ConversationTurn,
    n: int = DEFAULT_GUIDED_N,
    retriever: str = "bm25",
    embedder: Embedder | EmbedderSpec | None = None,
    bm25_k1: float | None = None,
    bm25_b: float | None = None,
) -> RankedList:
    """Retrieve the initial guided documents for a turn with its baseline query."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if retriever == "bm25":
        kwargs = {}
        if bm25_k1 is not None:
            kwargs["k1"] = bm25_k1
        if bm25_b is not None:
            kwargs["b"] = bm25_b
        return bm25_retrieve(index, turn.baseline_query, n, query_key=turn.key, **kwargs)
    if retriever == "dense":
        if embedder is None:
            raise ValueError("dense retrieval requires an embedder")
        return dense_retrieve(index, turn.baseline_query, n, embedder, query_key=turn.key)
    raise ValueError(f"unknown retriever: {retriever!r}")


def rerank_once(
    candidates: RankedList,
    query: str,
    embedder: Embedder | EmbedderSpec,
    doc_table: Mapping[str, Document],
    keep: int,
) -> RankedList:
    """Re-score candidates by query/document embedding cosine and keep the top.

    Ties are broken by prior rank, so re-ranking is stable under equal scores.
    """
    if not candidates.entries:
        raise ValueError("candidates must be non-empty")
    if keep < 1:
        raise ValueError(f"keep must be >= 1, got {keep}")
    provider = as_embedder(embedder)

    texts = []
    for doc_id, _ in candidates.entries:
        doc = doc_table.get(doc_id)
        if doc is None:
            raise KeyError(f"no document text for doc_id {doc_id!r}")
        texts.append(truncate_for_embedding(doc.text))

    query_vec = provider.embed_one(truncate_for_embedding(query))
    doc_vecs = provider.embed(texts)
    rescored = [
        (prior_rank, doc_id, cosine_similarity(query_vec, vec))
        for prior_rank, ((doc_id, _), vec) in enumerate(zip(candidates.entries, doc_vecs))
    ]
    rescored.sort(key=lambda item: (-item[2], item[0]))
    entries = [(doc_id, score) for _, doc_id, score in rescored[:keep]]
    return RankedList(query_key=candidates.query_key, entries=entries)


def two_stage_rerank(
    candidates: RankedList,
    query: str,
    stage1: Embedder | EmbedderSpec,
    stage2: Embedder | EmbedderSpec,
    doc_table: Mapping[str, Document],
    intermediate_keep: int = DEFAULT_INTERMEDIATE_KEEP,
    final_keep: int = DEFAULT_FINAL_KEEP,
) -> RankedList:
    """Two re-ranking passes with two embedders; the result is the final guided set."""
    final, _ = two_stage_rerank_with_intermediate(
        candidates, query, stage1, stage2, doc_table, intermediate_keep, final_keep
    )
    return final


def two_stage_rerank_with_intermediate(
    candidates: RankedList,
    query: str,
    stage1: Embedder | EmbedderSpec,
    stage2: Embedder | EmbedderSpec,
    doc_table: Mapping[str, Document],
    intermediate_keep: int = DEFAULT_INTERMEDIATE_KEEP,
    final_keep: int = DEFAULT_FINAL_KEEP,
) -> tuple[RankedList, RankedList]:
    """Like :func:`two_stage_rerank` but also returns the stage-1 list, so
    callers can persist both guided lists as run files."""
    if intermediate_keep < final_keep:
        raise ValueError(
            f"intermediate_keep ({intermediate_keep}) must be >= final_keep ({final_keep})"
        )
    first = as_embedder(stage1)
    second = as_embedder(stage2)
    if first.provider_id == second.provider_id:
        log.warning(
            "both re-ranking stages use provider %s; a second pass with the same "
            "embedder cannot reorder anything",
            first.provider_id,
        )
    intermediate = rerank_once(candidates, query, first, doc_table, intermediate_keep)
    final = rerank_once(intermediate, query, second, doc_table, final_keep)
    return final, intermediate
