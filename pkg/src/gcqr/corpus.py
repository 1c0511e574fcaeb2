"""Passage corpus ingestion, inverted index, and BM25 retrieval.

The index is the default first-stage retriever: deterministic, model-free
lexical scoring over a user-supplied corpus. A built :class:`CorpusIndex` is
immutable and safe for concurrent readers.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from gcqr.models import Document, RankedList

INDEX_MAGIC = "GCQR-IDX-1"

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class CorpusError(ValueError):
    """Raised for malformed corpus files or invariant violations."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs, dropping empty tokens.

    This is the single tokenizer shared by indexing, keyword candidate
    generation, and keyword matching, so token boundaries agree everywhere.
    """
    return _TOKEN_RE.findall(text.lower())


def ingest_corpus(path: str | Path, format: str = "jsonl") -> list[Document]:
    """Load documents from a jsonl or tsv corpus file, in file order.

    jsonl lines are objects with string fields ``doc_id`` and ``text``;
    tsv rows are ``doc_id<TAB>text``. Blank lines are skipped. Malformed
    lines and duplicate doc_ids raise :class:`CorpusError` naming the line.
    """
    if format not in ("jsonl", "tsv"):
        raise CorpusError(f"unknown corpus format: {format!r}")
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")

    docs: list[Document] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            doc_id, text = _parse_corpus_line(line, lineno, format)
            if not text.strip():
                raise CorpusError(f"line {lineno}: empty text for doc_id {doc_id!r}")
            if doc_id in seen:
                raise CorpusError(
                    f"line {lineno}: duplicate doc_id {doc_id!r}"
                    f" (first seen on line {seen[doc_id]})"
                )
            seen[doc_id] = lineno
            docs.append(Document(doc_id=doc_id, text=text))
    return docs


def _parse_corpus_line(line: str, lineno: int, format: str) -> tuple[str, str]:
    if format == "tsv":
        parts = line.split("\t", 1)
        if len(parts) != 2:
            raise CorpusError(f"line {lineno}: expected doc_id<TAB>text")
        doc_id, text = parts
    else:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid json ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise CorpusError(f"line {lineno}: expected a json object")
        doc_id = obj.get("doc_id")
        text = obj.get("text")
        if not isinstance(doc_id, str) or not isinstance(text, str):
            raise CorpusError(
                f"line {lineno}: object must carry string fields 'doc_id' and 'text'"
            )
    if not doc_id:
        raise CorpusError(f"line {lineno}: empty doc_id")
    return doc_id, text


@dataclass
class CorpusIndex:
    """Inverted index over a document list. Treat as immutable once built."""

    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    avg_doc_length: float
    doc_count: int
    doc_table: list[Document]
    _by_id: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._by_id:
            self._by_id = {doc.doc_id: pos for pos, doc in enumerate(self.doc_table)}

    @cached_property
    def docs_by_id(self) -> dict[str, Document]:
        return {doc.doc_id: doc for doc in self.doc_table}

    def document(self, doc_id: str) -> Document:
        try:
            return self.doc_table[self._by_id[doc_id]]
        except KeyError:
            raise KeyError(f"unknown doc_id: {doc_id!r}") from None


def build_index(docs: list[Document]) -> CorpusIndex:
    """Build the inverted index; postings cover exactly the tokens of each doc."""
    if not docs:
        raise CorpusError("cannot build an index over an empty corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for pos, doc in enumerate(docs):
        tokens = tokenize(doc.text)
        doc_lengths.append(len(tokens))
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((pos, tf))
    avg = sum(doc_lengths) / len(docs)
    return CorpusIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        doc_count=len(docs),
        doc_table=list(docs),
    )


def bm25_retrieve(
    index: CorpusIndex,
    query_text: str,
    k: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    query_key: tuple[str, int] = ("", 0),
) -> RankedList:
    """Score documents sharing at least one query term and return the top k.

    Scores use the non-negative idf variant ``ln(1 + (N - df + 0.5)/(df + 0.5))``
    with the usual saturated tf term; ties are broken by ascending doc_id so
    rankings are reproducible across runs.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_tokens = tokenize(query_text)
    if not query_tokens:
        raise CorpusError("empty query")

    n = index.doc_count
    candidates: dict[int, float] = {}
    for term in query_tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for pos, tf in plist:
            norm = 1.0 - b + b * index.doc_lengths[pos] / index.avg_doc_length
            contrib = idf * tf * (k1 + 1.0) / (tf + k1 * norm)
            candidates[pos] = candidates.get(pos, 0.0) + contrib

    scored = [(index.doc_table[pos].doc_id, score) for pos, score in candidates.items()]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return RankedList(query_key=query_key, entries=scored[:k])


def save_index(index: CorpusIndex, path: str | Path) -> None:
    """Persist the index as a versioned jsonl artifact.

    Layout: magic header line, one meta line, then one document per line.
    Postings are rebuilt on load from the stored documents, which is exact
    because the tokenizer is deterministic.
    """
    path = Path(path)
    lines = [INDEX_MAGIC]
    meta = {"doc_count": index.doc_count, "avg_doc_length": index.avg_doc_length}
    lines.append(json.dumps(meta, sort_keys=True, separators=(",", ":")))
    for doc in index.doc_table:
        lines.append(
            json.dumps(
                {"doc_id": doc.doc_id, "text": doc.text},
                sort_keys=True,
                separators=(",", ":"),
                ensure_ascii=True,
            )
        )
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_index(path: str | Path) -> CorpusIndex:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != INDEX_MAGIC:
            raise CorpusError(
                f"not a {INDEX_MAGIC} index file: bad header {header!r} in {path}"
            )
        meta_line = fh.readline()
        try:
            meta = json.loads(meta_line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"corrupt index meta line in {path}") from exc
        docs = []
        for lineno, line in enumerate(fh, start=3):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append(Document(doc_id=obj["doc_id"], text=obj["text"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"corrupt index doc line {lineno} in {path}") from exc
    index = build_index(docs)
    if index.doc_count != meta.get("doc_count"):
        raise CorpusError(
            f"index meta mismatch: expected {meta.get('doc_count')} docs,"
            f" loaded {index.doc_count}"
        )
    return index
