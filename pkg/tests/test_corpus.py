from __future__ import annotations

import json
import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcqr.corpus import (
    INDEX_MAGIC,
    CorpusError,
    bm25_retrieve,
    build_index,
    ingest_corpus,
    load_index,
    save_index,
    tokenize,
)
from gcqr.models import Document


# ---------------------------------------------------------------------------
# tokenize
# ---------------------------------------------------------------------------

def test_tokenize_splits_on_non_alphanumeric_runs():
    assert tokenize("Throat cancer, cure-rate!") == ["throat", "cancer", "cure", "rate"]


def test_tokenize_empty_input():
    assert tokenize("") == []


def test_tokenize_mixed_alphanumerics():
    assert tokenize("A1-b2") == ["a1", "b2"]


@given(st.text(max_size=200))
def test_tokenize_tokens_are_lowercase_alphanumeric_and_deterministic(text):
    tokens = tokenize(text)
    assert tokens == tokenize(text)
    for token in tokens:
        assert token
        assert token == token.lower()
        assert all(ch.isalnum() for ch in token)


# ---------------------------------------------------------------------------
# ingest_corpus
# ---------------------------------------------------------------------------

def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_ingest_jsonl_in_file_order(tmp_path):
    path = tmp_path / "corpus.jsonl"
    _write(
        path,
        [
            json.dumps({"doc_id": "d1", "text": "alpha"}),
            json.dumps({"doc_id": "d2", "text": "beta"}),
            json.dumps({"doc_id": "d3", "text": "gamma"}),
        ],
    )
    docs = ingest_corpus(path, "jsonl")
    assert [d.doc_id for d in docs] == ["d1", "d2", "d3"]
    assert docs[1].text == "beta"


def test_ingest_duplicate_doc_id_names_id_and_line(tmp_path):
    path = tmp_path / "corpus.jsonl"
    rows = [
        {"doc_id": "d0", "text": "x"},
        {"doc_id": "d1", "text": "y"},
        {"doc_id": "d2", "text": "z"},
        {"doc_id": "d3", "text": "w"},
        {"doc_id": "d1", "text": "y again"},
    ]
    _write(path, [json.dumps(r) for r in rows])
    with pytest.raises(CorpusError, match=r"line 5.*'d1'"):
        ingest_corpus(path, "jsonl")


def test_ingest_tsv_row(tmp_path):
    path = tmp_path / "corpus.tsv"
    _write(path, ["d9\tthroat cancer is curable"])
    docs = ingest_corpus(path, "tsv")
    assert docs == [Document(doc_id="d9", text="throat cancer is curable")]


def test_ingest_malformed_json_reports_line(tmp_path):
    path = tmp_path / "corpus.jsonl"
    _write(path, [json.dumps({"doc_id": "d1", "text": "ok"}), "{not json"])
    with pytest.raises(CorpusError, match="line 2"):
        ingest_corpus(path, "jsonl")


def test_ingest_blank_lines_skipped(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        json.dumps({"doc_id": "d1", "text": "a"}) + "\n\n   \n"
        + json.dumps({"doc_id": "d2", "text": "b"}) + "\n",
        encoding="utf-8",
    )
    assert len(ingest_corpus(path, "jsonl")) == 2


def test_ingest_empty_text_rejected(tmp_path):
    path = tmp_path / "corpus.tsv"
    _write(path, ["d1\t   "])
    with pytest.raises(CorpusError, match="empty text"):
        ingest_corpus(path, "tsv")


def test_ingest_missing_file():
    with pytest.raises(CorpusError, match="not found"):
        ingest_corpus("/nonexistent/corpus.jsonl", "jsonl")


def test_ingest_unknown_format(tmp_path):
    path = tmp_path / "corpus.xml"
    path.write_text("<xml/>", encoding="utf-8")
    with pytest.raises(CorpusError, match="format"):
        ingest_corpus(path, "xml")


# ---------------------------------------------------------------------------
# build_index
# ---------------------------------------------------------------------------

def test_build_index_single_doc_postings():
    index = build_index([Document("d1", "a a b")])
    assert index.postings == {"a": [(0, 2)], "b": [(0, 1)]}
    assert index.avg_doc_length == 3
    assert index.doc_count == 1


def test_build_index_avg_doc_length_is_mean():
    index = build_index([Document("d1", "x y"), Document("d2", "p q r s")])
    assert index.avg_doc_length == pytest.approx(3.0, abs=1e-9)


def test_build_index_empty_corpus_rejected():
    with pytest.raises(CorpusError):
        build_index([])


def _random_docs(rng, count, vocab=("ant", "bee", "cow", "dog", "elk", "fox")):
    docs = []
    for i in range(count):
        words = rng.choices(vocab, k=rng.randint(1, 12))
        docs.append(Document(f"d{i:02d}", " ".join(words)))
    return docs


def test_build_index_matches_naive_term_count_oracle():
    # Oracle: count terms per document directly with the same tokenizer.
    rng = random.Random(7)
    docs = _random_docs(rng, 10)
    index = build_index(docs)

    expected: dict[str, list[tuple[int, int]]] = {}
    for pos, doc in enumerate(docs):
        for term, tf in sorted(Counter(tokenize(doc.text)).items()):
            expected.setdefault(term, []).append((pos, tf))
    assert index.postings == expected
    assert index.doc_lengths == [len(tokenize(d.text)) for d in docs]


def test_index_round_trip_postings_reproduce_doc_table():
    rng = random.Random(11)
    docs = _random_docs(rng, 25)
    index = build_index(docs)
    for term, plist in index.postings.items():
        for pos, tf in plist:
            tokens = tokenize(index.doc_table[pos].text)
            assert tokens.count(term) == tf
    # and nothing is missing
    for pos, doc in enumerate(docs):
        for term, tf in Counter(tokenize(doc.text)).items():
            assert (pos, tf) in index.postings[term]


# ---------------------------------------------------------------------------
# bm25_retrieve
# ---------------------------------------------------------------------------

def bm25_oracle(docs, query_text, k, k1=0.9, b=0.4):
    """Exhaustive scorer over every document, straight from the formula."""
    tokenized = [tokenize(d.text) for d in docs]
    n = len(docs)
    avg = sum(len(t) for t in tokenized) / n
    df: Counter = Counter()
    for toks in tokenized:
        df.update(set(toks))
    query_tokens = tokenize(query_text)
    scored = []
    for doc, toks in zip(docs, tokenized):
        counts = Counter(toks)
        score = 0.0
        matched = False
        for term in query_tokens:
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            matched = True
            idf = math.log(1.0 + (n - df[term] + 0.5) / (df[term] + 0.5))
            norm = 1.0 - b + b * len(toks) / avg
            score += idf * tf * (k1 + 1.0) / (tf + k1 * norm)
        if matched:
            scored.append((doc.doc_id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


TOY_CORPUS = [
    Document("d01", "throat cancer has a high cure rate when found early"),
    Document("d02", "lung cancer screening programs reduce mortality"),
    Document("d03", "the throat is part of the upper airway"),
    Document("d04", "cure rates for many cancers keep improving"),
    Document("d05", "sore throat remedies include tea and rest"),
    Document("d06", "early detection matters for throat cancer outcomes"),
    Document("d07", "radiation therapy treats localized throat tumors"),
    Document("d08", "smoking raises the risk of throat cancer"),
    Document("d09", "a balanced diet supports recovery"),
    Document("d10", "cancer research funding grew last year"),
    Document("d11", "vocal cord strain mimics throat illness"),
    Document("d12", "chemotherapy side effects vary by patient"),
    Document("d13", "throat cancer throat cancer throat cancer"),
    Document("d14", "the cure for boredom is curiosity"),
    Document("d15", "clinical trials test new cancer drugs"),
    Document("d16", "hydration helps a scratchy throat"),
    Document("d17", "survival statistics for cancer differ by stage"),
    Document("d18", "this passage mentions nothing relevant"),
    Document("d19", "tonsils sit at the back of the throat"),
    Document("d20", "oncology clinics coordinate cancer care"),
]


def test_bm25_unique_text_ranks_first():
    docs = TOY_CORPUS + [Document("d99", "zyzzyva quokka paradox")]
    index = build_index(docs)
    result = bm25_retrieve(index, "zyzzyva quokka paradox", k=5)
    assert result.entries[0][0] == "d99"


def test_bm25_matches_exhaustive_oracle_on_toy_corpus():
    index = build_index(TOY_CORPUS)
    got = bm25_retrieve(index, "throat cancer", k=5)
    assert got.entries == bm25_oracle(TOY_CORPUS, "throat cancer", k=5)


def test_bm25_k_larger_than_corpus_truncates():
    index = build_index(TOY_CORPUS)
    result = bm25_retrieve(index, "throat cancer cure", k=1000)
    assert len(result.entries) <= 20


def test_bm25_empty_query_rejected():
    index = build_index(TOY_CORPUS)
    with pytest.raises(CorpusError, match="empty query"):
        bm25_retrieve(index, "...!!!", k=3)


def test_bm25_k_must_be_positive():
    index = build_index(TOY_CORPUS)
    with pytest.raises(ValueError):
        bm25_retrieve(index, "throat", k=0)


def test_bm25_every_result_shares_a_query_term():
    index = build_index(TOY_CORPUS)
    result = bm25_retrieve(index, "cure rate", k=20)
    query_terms = set(tokenize("cure rate"))
    by_id = index.docs_by_id
    for doc_id, _ in result.entries:
        assert query_terms & set(tokenize(by_id[doc_id].text))


def test_bm25_sorted_desc_with_doc_id_tiebreak_and_deterministic():
    # d13x and d13y are exact duplicates, so their scores tie exactly.
    docs = TOY_CORPUS + [
        Document("d13y", "throat cancer throat cancer throat cancer"),
    ]
    index = build_index(docs)
    first = bm25_retrieve(index, "throat cancer", k=25)
    second = bm25_retrieve(index, "throat cancer", k=25)
    assert first.entries == second.entries
    scores = [s for _, s in first.entries]
    assert scores == sorted(scores, reverse=True)
    pos13 = first.doc_ids().index("d13")
    assert first.doc_ids()[pos13 + 1] == "d13y"


def test_bm25_equivalence_random_queries():
    rng = random.Random(1234)
    vocab = ["ant", "bee", "cow", "dog", "elk", "fox", "gnu", "hen"]
    docs = [
        Document(f"d{i:02d}", " ".join(rng.choices(vocab, k=rng.randint(2, 15))))
        for i in range(30)
    ]
    index = build_index(docs)
    for _ in range(40):
        query = " ".join(rng.choices(vocab, k=rng.randint(1, 4)))
        got = bm25_retrieve(index, query, k=30)
        assert got.entries == bm25_oracle(docs, query, k=30)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_index_save_load_round_trip(tmp_path):
    index = build_index(TOY_CORPUS)
    path = tmp_path / "toy.idx"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded.postings == index.postings
    assert loaded.doc_lengths == index.doc_lengths
    assert loaded.doc_table == index.doc_table
    assert loaded.avg_doc_length == pytest.approx(index.avg_doc_length, abs=1e-12)


def test_index_file_starts_with_magic_and_is_reproducible(tmp_path):
    index = build_index(TOY_CORPUS)
    a, b = tmp_path / "a.idx", tmp_path / "b.idx"
    save_index(index, a)
    save_index(index, b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text(encoding="utf-8").splitlines()[0] == INDEX_MAGIC


def test_load_index_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_text("NOT-AN-INDEX\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="header"):
        load_index(path)


@settings(max_examples=25)
@given(st.lists(st.text(alphabet="abcdef ", min_size=1, max_size=30), min_size=1, max_size=8))
def test_bm25_property_sorted_and_unique(texts):
    docs = [
        Document(f"d{i}", text)
        for i, text in enumerate(texts)
        if tokenize(text)
    ]
    if not docs:
        return
    index = build_index(docs)
    query = docs[0].text
    result = bm25_retrieve(index, query, k=len(docs))
    ids = result.doc_ids()
    assert len(ids) == len(set(ids))
    scores = [s for _, s in result.entries]
    assert scores == sorted(scores, reverse=True)
