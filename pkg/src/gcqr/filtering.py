"""Filtering mined signals by embedding distance and unifying survivors.

Each candidate item (keyword or unified answer) gets a filter score built
from two distances: to the current query and to the dialogue history. Items
scoring below the threshold are dropped as redundant; the rest are
concatenated onto the baseline query.

Score construction: query component is ``10 * (1 - cos(query, item))``, the
history component aggregates ``10 * (1 - cos(history[i], item))`` over history
entries, and the final score is the mean of the two. Scores therefore lie in
[0, 20]: 0 only for an item identical in embedding space to both the query
and its nearest/farthest history entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from gcqr.embeddings import (
    Embedder,
    EmbedderSpec,
    EmbeddingVector,
    as_embedder,
    cosine_similarity,
)
from gcqr.enrichment import KeywordCandidate
from gcqr.models import ConversationTurn
from gcqr.retrieval import truncate_for_embedding

log = logging.getLogger(__name__)

MAX_DISTANCE = "max_distance"
MIN_DISTANCE = "min_distance"
HISTORY_AGGREGATIONS = (MAX_DISTANCE, MIN_DISTANCE)


@dataclass
class EnrichmentItem:
    """A keyword or unified-answer candidate with its embedding and score."""

    kind: str  # "keyword" | "answer"
    text: str
    embedding: EmbeddingVector | None = None
    filter_score: float | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("keyword", "answer"):
            raise ValueError(f"unknown item kind: {self.kind!r}")
        if not self.text:
            raise ValueError("item text must be non-empty")


@dataclass
class ReformulatedQuery:
    """The final query: baseline text plus surviving keywords and answer."""

    turn_key: tuple[str, int]
    baseline: str
    kept_keywords: list[str]
    kept_answer: str
    final_text: str


def query_score(query_emb: EmbeddingVector, item_emb: EmbeddingVector) -> float:
    """Distance of an item from the current query: ``10 * (1 - cosine)``."""
    return 10.0 * (1.0 - cosine_similarity(query_emb, item_emb))


def history_score(
    history_embs: list[EmbeddingVector],
    item_emb: EmbeddingVector,
    aggregation: str = MAX_DISTANCE,
) -> float:
    """Aggregate distance of an item from the dialogue history.

    ``max_distance`` takes the maximum of the per-entry distances;
    ``min_distance`` takes the minimum (equivalently, the distance to the
    most similar history entry). An empty history scores 0, so first-turn
    items are judged on the query component alone.
    """
    if aggregation not in HISTORY_AGGREGATIONS:
        raise ValueError(f"unknown history aggregation: {aggregation!r}")
    if not history_embs:
        log.debug("empty history: history score defaults to 0")
        return 0.0
    distances = [
        10.0 * (1.0 - cosine_similarity(h, item_emb)) for h in history_embs
    ]
    return max(distances) if aggregation == MAX_DISTANCE else min(distances)


def filter_score(qs: float, hs: float) -> float:
    """Mean of the query and history components."""
    if qs < 0 or hs < 0:
        raise ValueError("component scores must be >= 0")
    return (qs + hs) / 2.0


def filter_items(
    items: list[EnrichmentItem],
    turn: ConversationTurn,
    threshold: float,
    embedder: Embedder | EmbedderSpec,
    history_aggregation: str = MAX_DISTANCE,
) -> tuple[list[EnrichmentItem], list[EnrichmentItem]]:
    """Score every item and partition into (kept, dropped), order preserved.

    Items at or above the threshold survive. Keywords are scored
    individually; a unified answer is scored as one whole item. Threshold 0
    keeps everything since scores are non-negative.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    if not items:
        return [], []
    provider = as_embedder(embedder)
    query_emb = provider.embed_one(truncate_for_embedding(turn.baseline_query))
    history_embs = (
        provider.embed([truncate_for_embedding(h) for h in turn.history])
        if turn.history
        else []
    )
    item_embs = provider.embed([truncate_for_embedding(item.text) for item in items])

    kept: list[EnrichmentItem] = []
    dropped: list[EnrichmentItem] = []
    for item, emb in zip(items, item_embs):
        item.embedding = emb
        qs = query_score(query_emb, emb)
        hs = history_score(history_embs, emb, aggregation=history_aggregation)
        item.filter_score = filter_score(qs, hs)
        if item.filter_score >= threshold:
            kept.append(item)
        else:
            dropped.append(item)
    return kept, dropped


def unify(
    turn: ConversationTurn,
    kept_keywords: list[KeywordCandidate],
    kept_answer: str,
) -> ReformulatedQuery:
    """Concatenate baseline, deduplicated keywords, and the answer block.

    Keyword deduplication is case-insensitive and keeps the first occurrence.
    Empty parts elide their separator, so with nothing kept the final text is
    the baseline itself.
    """
    seen: set[str] = set()
    deduped: list[str] = []
    for kw in kept_keywords:
        folded = kw.text.casefold()
        if folded in seen:
            continue
        seen.add(folded)
        deduped.append(kw.text)
    parts = [turn.baseline_query, " ".join(deduped), kept_answer]
    final_text = " ".join(part for part in parts if part)
    return ReformulatedQuery(
        turn_key=turn.key,
        baseline=turn.baseline_query,
        kept_keywords=deduped,
        kept_answer=kept_answer,
        final_text=final_text,
    )
