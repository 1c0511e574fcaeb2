"""TREC-style evaluation: qrels and run file I/O, MRR, NDCG@k, and the
keyword precision diagnostic.

Query identifiers follow the ``conversationid_turnid`` convention. Metric
means are taken over the run's queries that have relevance judgments; a
query retrieved nothing relevant contributes 0 rather than being skipped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from gcqr.corpus import tokenize
from gcqr.enrichment import KeywordCandidate
from gcqr.models import Document

log = logging.getLogger(__name__)

REL_LEVELS = (0, 1, 2, 3, 4)


class EvaluationError(ValueError):
    """Malformed qrels/run input or an unevaluable request."""


@dataclass
class Qrels:
    """Graded relevance judgments keyed by qid, then doc_id."""

    judgments: dict[str, dict[str, int]]

    def relevant_docs(self, qid: str, threshold: int = 1) -> set[str]:
        return {
            doc_id
            for doc_id, rel in self.judgments.get(qid, {}).items()
            if rel >= threshold
        }


@dataclass(frozen=True)
class RunEntry:
    qid: str
    doc_id: str
    rank: int
    score: float
    tag: str


def parse_qrels(path: str | Path) -> Qrels:
    """Parse whitespace-separated ``qid 0 docid rel`` lines."""
    path = Path(path)
    judgments: dict[str, dict[str, int]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise EvaluationError(
                    f"{path}:{lineno}: expected 'qid 0 docid rel', got {len(parts)} fields"
                )
            qid, _, doc_id, rel_text = parts
            try:
                rel = int(rel_text)
            except ValueError:
                raise EvaluationError(
                    f"{path}:{lineno}: non-integer relevance {rel_text!r}"
                ) from None
            if rel not in REL_LEVELS:
                raise EvaluationError(
                    f"{path}:{lineno}: relevance {rel} outside 0..4"
                )
            judgments.setdefault(qid, {})[doc_id] = rel
    return Qrels(judgments=judgments)


def write_run(entries: Iterable[RunEntry], path: str | Path) -> None:
    """Write ``qid Q0 docid rank score tag`` lines.

    Scores are serialized with ``repr`` so a write/parse round trip is
    bit-exact and output bytes are platform independent.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            fh.write(
                f"{entry.qid} Q0 {entry.doc_id} {entry.rank} {entry.score!r} {entry.tag}\n"
            )


def parse_run(path: str | Path) -> list[RunEntry]:
    path = Path(path)
    entries: list[RunEntry] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise EvaluationError(
                    f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'"
                )
            qid, _, doc_id, rank_text, score_text, tag = parts
            try:
                rank = int(rank_text)
                score = float(score_text)
            except ValueError:
                raise EvaluationError(
                    f"{path}:{lineno}: bad rank/score fields"
                ) from None
            entries.append(RunEntry(qid=qid, doc_id=doc_id, rank=rank, score=score, tag=tag))
    return entries


def _group_by_qid(run: list[RunEntry]) -> dict[str, list[RunEntry]]:
    grouped: dict[str, list[RunEntry]] = {}
    for entry in run:
        grouped.setdefault(entry.qid, []).append(entry)
    for entries in grouped.values():
        entries.sort(key=lambda e: e.rank)
    return grouped


def per_query_mrr(
    run: list[RunEntry], qrels: Qrels, rel_threshold: int = 1
) -> dict[str, float]:
    """Reciprocal rank of the first relevant document, per evaluable query."""
    grouped = _group_by_qid(run)
    out: dict[str, float] = {}
    for qid, entries in grouped.items():
        relevant = qrels.relevant_docs(qid, rel_threshold)
        if not relevant:
            continue
        rr = 0.0
        for entry in entries:
            if entry.doc_id in relevant:
                rr = 1.0 / entry.rank
                break
        out[qid] = rr
    return out


def mrr(run: list[RunEntry], qrels: Qrels, rel_threshold: int = 1) -> float:
    """Mean reciprocal rank of the first relevant document per query.

    Evaluated over run queries with at least one judged-relevant document;
    a query whose ranking contains none of them contributes 0. Returns 0.0
    when no run query is evaluable.
    """
    if not run:
        raise EvaluationError("empty run")
    per_query = per_query_mrr(run, qrels, rel_threshold)
    if not per_query:
        return 0.0
    return sum(per_query.values()) / len(per_query)


def per_query_ndcg(
    run: list[RunEntry],
    qrels: Qrels,
    k: int = 3,
    exponential_gain: bool = False,
) -> dict[str, float]:
    """NDCG@k per judged query present in the run."""
    if k < 1:
        raise EvaluationError(f"k must be >= 1, got {k}")

    def gain(rel: int) -> float:
        return float(2**rel - 1) if exponential_gain else float(rel)

    grouped = _group_by_qid(run)
    out: dict[str, float] = {}
    for qid, entries in grouped.items():
        judged = qrels.judgments.get(qid)
        if not judged:
            continue
        dcg = 0.0
        for i, entry in enumerate(entries[:k], start=1):
            dcg += gain(judged.get(entry.doc_id, 0)) / math.log2(i + 1)
        ideal = sorted(judged.values(), reverse=True)[:k]
        idcg = sum(gain(rel) / math.log2(i + 1) for i, rel in enumerate(ideal, start=1))
        out[qid] = dcg / idcg if idcg > 0 else 0.0
    return out


def ndcg_at_k(
    run: list[RunEntry],
    qrels: Qrels,
    k: int = 3,
    exponential_gain: bool = False,
) -> float:
    """Mean NDCG@k with linear gain and log2(rank+1) discounting.

    Unjudged retrieved documents gain 0; the ideal ranking uses all judged
    relevances for the query sorted descending. Queries whose judgments are
    all zero score 0. ``exponential_gain`` switches to ``2^rel - 1``.
    """
    if not run:
        raise EvaluationError("empty run")
    per_query = per_query_ndcg(run, qrels, k=k, exponential_gain=exponential_gain)
    if not per_query:
        return 0.0
    return sum(per_query.values()) / len(per_query)


def run_entries_from_ranked(qid: str, entries: list[tuple[str, float]], tag: str) -> list[RunEntry]:
    """Turn a ranked (doc_id, score) list into run entries with contiguous ranks."""
    return [
        RunEntry(qid=qid, doc_id=doc_id, rank=rank, score=score, tag=tag)
        for rank, (doc_id, score) in enumerate(entries, start=1)
    ]


def evaluate_run(
    run: list[RunEntry],
    qrels: Qrels,
    rel_threshold: int = 1,
    ndcg_k: int = 3,
) -> dict:
    """Metrics report for one run: means, per-query breakdown, key mismatches."""
    if not run:
        raise EvaluationError("empty run")
    rr = per_query_mrr(run, qrels, rel_threshold)
    ndcg = per_query_ndcg(run, qrels, k=ndcg_k)
    run_qids = list(dict.fromkeys(entry.qid for entry in run))
    unjudged = [qid for qid in run_qids if qid not in qrels.judgments]
    unretrieved = sorted(qid for qid in qrels.judgments if qid not in set(run_qids))
    per_query = {
        qid: {
            "MRR": rr.get(qid),
            f"NDCG@{ndcg_k}": ndcg.get(qid),
        }
        for qid in run_qids
        if qid in rr or qid in ndcg
    }
    report = {
        "MRR": sum(rr.values()) / len(rr) if rr else 0.0,
        f"NDCG@{ndcg_k}": sum(ndcg.values()) / len(ndcg) if ndcg else 0.0,
        "per_query": per_query,
        "evaluated_queries": len(per_query),
        "run_queries": len(run_qids),
        "rel_threshold": rel_threshold,
        "run_queries_without_judgments": unjudged,
        "judged_queries_missing_from_run": unretrieved,
    }
    if not per_query:
        log.warning("no overlap between run queries and qrels; 0 queries evaluated")
    return report


def keyword_precision(
    keywords: list[KeywordCandidate],
    qrels: Qrels,
    qid: str,
    doc_table: Mapping[str, Document],
) -> float:
    """Fraction of unique keywords whose tokens all occur in top-graded documents.

    A keyword counts as matched when every one of its tokens appears in at
    least one document judged at the highest relevance level (4) for this
    query. Returns 0.0 when there are no keywords.
    """
    unique_texts = list(dict.fromkeys(kw.text.casefold() for kw in keywords))
    if not unique_texts:
        return 0.0

    top_tokens: set[str] = set()
    for doc_id, rel in qrels.judgments.get(qid, {}).items():
        if rel != 4:
            continue
        doc = doc_table.get(doc_id)
        if doc is None:
            log.warning("qrels doc %r for query %r missing from corpus; skipped", doc_id, qid)
            continue
        top_tokens.update(tokenize(doc.text))

    matched = 0
    for text in unique_texts:
        tokens = tokenize(text)
        if tokens and all(tok in top_tokens for tok in tokens):
            matched += 1
    return matched / len(unique_texts)
