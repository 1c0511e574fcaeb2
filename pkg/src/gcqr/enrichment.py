"""Mining retriever-friendly signals from the final guided documents.

Two signal families: per-document keyword lists chosen by embedding
similarity to the query, and one expected answer per document, later merged
into a single unified answer string.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping

import requests

from gcqr.corpus import tokenize
from gcqr.embeddings import Embedder, EmbedderSpec, as_embedder, cosine_similarity
from gcqr.models import ConversationTurn, Document, RankedList
from gcqr.retrieval import truncate_for_embedding

log = logging.getLogger(__name__)

_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")


@dataclass(frozen=True)
class KeywordCandidate:
    """A token or n-gram mined from one guided document."""

    text: str
    source_doc: str
    score: float


@dataclass(frozen=True)
class AnswerSpan:
    """A contiguous span (sentence or whole text) of one guided document."""

    text: str
    source_doc: str
    score: float


@dataclass(frozen=True)
class EnrichmentConfig:
    """How many documents feed each signal and how many keywords per document.

    ``keyword_span`` is the per-document keyword budget; ``ngram_range``
    controls candidate width (unigrams by default). Setting a top_docs knob
    to 0 disables that signal entirely.
    """

    keyword_top_docs: int
    keyword_span: int
    answer_top_docs: int
    ngram_range: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.keyword_top_docs < 0 or self.answer_top_docs < 0:
            raise ValueError("top_docs values must be >= 0")
        if self.keyword_span < 1:
            raise ValueError("keyword_span must be >= 1")
        low, high = self.ngram_range
        if not (1 <= low <= high <= 3):
            raise ValueError(f"ngram_range must satisfy 1 <= low <= high <= 3, got {self.ngram_range}")


@dataclass(frozen=True)
class ExtractorSpec:
    """Answer extractor: the built-in sentence selector or an HTTP QA service."""

    kind: str = "builtin"
    endpoint: str | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in ("builtin", "http"):
            raise ValueError(f"unknown extractor kind: {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http extractor requires an endpoint")


class ExtractorError(RuntimeError):
    """HTTP answer extractor failure or protocol violation."""


def split_sentences(text: str) -> list[str]:
    """Split on period/question/exclamation boundaries; no boundary means one sentence."""
    parts = [part.strip() for part in _SENTENCE_SPLIT_RE.split(text)]
    sentences = [part for part in parts if part]
    if not sentences:
        stripped = text.strip()
        return [stripped] if stripped else []
    return sentences


def ngram_candidates(text: str, ngram_range: tuple[int, int]) -> list[str]:
    """Unique n-gram candidate strings, in first-occurrence order.

    Candidates never cross sentence boundaries, which keeps multi-token
    phrases coherent.
    """
    low, high = ngram_range
    seen: dict[str, None] = {}
    for sentence in split_sentences(text):
        tokens = tokenize(sentence)
        for n in range(low, high + 1):
            for i in range(len(tokens) - n + 1):
                seen.setdefault(" ".join(tokens[i : i + n]), None)
    return list(seen)


def extract_keywords(
    doc: Document,
    query: str,
    span: int,
    ngram_range: tuple[int, int],
    embedder: Embedder | EmbedderSpec,
) -> list[KeywordCandidate]:
    """Top ``span`` n-gram candidates of one document by cosine to the query.

    Ties are resolved alphabetically. A document with fewer unique candidates
    than ``span`` yields all of them; no candidates yields an empty list.
    """
    if span < 1:
        raise ValueError(f"span must be >= 1, got {span}")
    candidates = ngram_candidates(doc.text, ngram_range)
    if not candidates:
        return []
    provider = as_embedder(embedder)
    query_vec = provider.embed_one(truncate_for_embedding(query))
    vecs = provider.embed(candidates)
    scored = [
        (text, cosine_similarity(query_vec, vec))
        for text, vec in zip(candidates, vecs)
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [
        KeywordCandidate(text=text, source_doc=doc.doc_id, score=score)
        for text, score in scored[:span]
    ]


def augment_keywords(
    guided: RankedList,
    turn: ConversationTurn,
    cfg: EnrichmentConfig,
    doc_table: Mapping[str, Document],
    embedder: Embedder | EmbedderSpec,
) -> list[KeywordCandidate]:
    """Concatenated keyword lists over the top guided documents, rank order first.

    Duplicates across documents are retained here; deduplication happens at
    unification time.
    """
    if not guided.entries:
        raise ValueError("guided list must be non-empty")
    top_docs = cfg.keyword_top_docs
    if top_docs == 0:
        return []
    if top_docs > len(guided.entries):
        log.warning(
            "keyword_top_docs=%d exceeds guided list size %d; clamping",
            top_docs,
            len(guided.entries),
        )
        top_docs = len(guided.entries)
    provider = as_embedder(embedder)
    keywords: list[KeywordCandidate] = []
    for doc_id, _ in guided.entries[:top_docs]:
        doc = doc_table.get(doc_id)
        if doc is None:
            raise KeyError(f"no document text for doc_id {doc_id!r}")
        keywords.extend(
            extract_keywords(doc, turn.baseline_query, cfg.keyword_span, cfg.ngram_range, provider)
        )
    return keywords


def extract_answer(
    turn: ConversationTurn,
    doc: Document,
    extractor: ExtractorSpec,
    embedder: Embedder | EmbedderSpec | None = None,
) -> AnswerSpan:
    """One expected answer from one document.

    Built-in extractor: the sentence most similar to the baseline query by
    embedding cosine, earliest sentence on ties. HTTP extractor: the span
    string returned by the QA service, verbatim.
    """
    if extractor.kind == "http":
        return _extract_answer_http(turn, doc, extractor)
    if embedder is None:
        raise ValueError("builtin extractor requires an embedder")
    provider = as_embedder(embedder)
    sentences = split_sentences(doc.text)
    if not sentences:
        raise ValueError(f"document {doc.doc_id!r} has no extractable text")
    query_vec = provider.embed_one(truncate_for_embedding(turn.baseline_query))
    vecs = provider.embed([truncate_for_embedding(s) for s in sentences])
    best_pos = 0
    best_score = -2.0
    for pos, vec in enumerate(vecs):
        score = cosine_similarity(query_vec, vec)
        if score > best_score:
            best_pos, best_score = pos, score
    return AnswerSpan(text=sentences[best_pos], source_doc=doc.doc_id, score=best_score)


def _extract_answer_http(turn: ConversationTurn, doc: Document, extractor: ExtractorSpec) -> AnswerSpan:
    payload = {"question": turn.baseline_query, "context": doc.text}
    endpoint = extractor.endpoint.rstrip("/")
    try:
        response = requests.post(f"{endpoint}/extract", json=payload, timeout=extractor.timeout)
    except requests.RequestException as exc:
        raise ExtractorError(f"extract request failed: {exc}") from exc
    if response.status_code != 200:
        raise ExtractorError(f"extract request returned HTTP {response.status_code}")
    try:
        body = response.json()
        answer = body["answer"]
        score = float(body.get("score", 0.0))
    except (ValueError, KeyError, TypeError) as exc:
        raise ExtractorError(f"malformed extract response: {exc}") from exc
    if not isinstance(answer, str):
        raise ExtractorError("extract response 'answer' is not a string")
    return AnswerSpan(text=answer, source_doc=doc.doc_id, score=score)


def generate_answers(
    guided: RankedList,
    turn: ConversationTurn,
    cfg: EnrichmentConfig,
    doc_table: Mapping[str, Document],
    extractor: ExtractorSpec,
    embedder: Embedder | EmbedderSpec | None = None,
) -> list[AnswerSpan]:
    """One answer per top guided document, in guided rank order."""
    if not guided.entries:
        raise ValueError("guided list must be non-empty")
    top_docs = cfg.answer_top_docs
    if top_docs == 0:
        return []
    if top_docs > len(guided.entries):
        log.warning(
            "answer_top_docs=%d exceeds guided list size %d; clamping",
            top_docs,
            len(guided.entries),
        )
        top_docs = len(guided.entries)
    if extractor.kind == "builtin":
        embedder = as_embedder(embedder) if embedder is not None else None
    spans = []
    for doc_id, _ in guided.entries[:top_docs]:
        doc = doc_table.get(doc_id)
        if doc is None:
            raise KeyError(f"no document text for doc_id {doc_id!r}")
        spans.append(extract_answer(turn, doc, extractor, embedder))
    return spans


def unify_answers(spans: list[AnswerSpan]) -> str:
    """Join answer texts with single spaces, preserving guided rank order."""
    return " ".join(span.text for span in spans)
