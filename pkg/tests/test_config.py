from __future__ import annotations

import pytest

from gcqr.config import (
    EMBEDDER_STAGES,
    ConfigError,
    config_from_dict,
    config_to_dict,
    load_config,
    load_preset,
)


def minimal_dict(**overrides):
    data = {
        "corpus": {"path": "corpus.jsonl"},
        "queries": {"path": "queries.jsonl"},
        "filter": {"threshold": 1.0},
        "enrichment": {"keyword_top_docs": 2, "keyword_span": 3, "answer_top_docs": 2},
        "embedders": {
            stage: {"kind": "deterministic", "dimension": 32, "seed": i}
            for i, stage in enumerate(EMBEDDER_STAGES)
        },
    }
    data.update(overrides)
    return data


def test_load_config_resolves_paths_relative_to_file(fixtures_dir):
    config = load_config(fixtures_dir / "fixture.toml")
    assert config.corpus_path == fixtures_dir / "corpus50.jsonl"
    assert config.queries_path == fixtures_dir / "session6.jsonl"
    assert config.qrels_path == fixtures_dir / "qrels.txt"
    assert config.filter_threshold == 3.5
    assert config.run_depth == 50
    assert set(config.embedders) >= set(EMBEDDER_STAGES)


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/config.toml")


def test_load_config_invalid_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[corpus\npath=", encoding="utf-8")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(path)


def test_missing_embedder_stage_rejected():
    data = minimal_dict()
    del data["embedders"]["filter"]
    with pytest.raises(ConfigError, match="filter"):
        config_from_dict(data)


def test_missing_required_key_reported_with_section():
    data = minimal_dict()
    del data["filter"]["threshold"]
    with pytest.raises(ConfigError, match=r"threshold.*\[filter\]"):
        config_from_dict(data)


def test_dense_retriever_requires_retrieval_embedder():
    data = minimal_dict(retrieval={"retriever": "dense"})
    with pytest.raises(ConfigError, match="retrieval"):
        config_from_dict(data)
    data["embedders"]["retrieval"] = {"kind": "deterministic", "dimension": 32, "seed": 9}
    assert config_from_dict(data).retriever == "dense"


def test_invalid_values_rejected():
    with pytest.raises(ConfigError, match="retriever"):
        config_from_dict(minimal_dict(retrieval={"retriever": "ance"}))
    with pytest.raises(ConfigError, match="intermediate_keep"):
        config_from_dict(minimal_dict(retrieval={"intermediate_keep": 5, "final_keep": 10}))
    with pytest.raises(ConfigError, match="filter_threshold"):
        config_from_dict(minimal_dict(filter={"threshold": -1.0}))
    with pytest.raises(ConfigError, match="history_aggregation"):
        config_from_dict(
            minimal_dict(filter={"threshold": 1.0, "history_aggregation": "median"})
        )


def test_bad_embedder_table_names_stage():
    data = minimal_dict()
    data["embedders"]["keyword"] = {"kind": "deterministic", "dimension": 32}
    with pytest.raises(ConfigError, match=r"embedders\.keyword"):
        config_from_dict(data)


def test_with_overrides():
    config = config_from_dict(minimal_dict())
    updated = config.with_overrides(
        filter_threshold=0.0, guided_n=10, span=7, top_docs=1, output_dir="/tmp/x"
    )
    assert updated.filter_threshold == 0.0
    assert updated.guided_n == 10
    assert updated.enrichment.keyword_span == 7
    assert updated.enrichment.keyword_top_docs == 1
    assert str(updated.output_dir) == "/tmp/x"
    # original untouched
    assert config.guided_n == 2000
    assert config.enrichment.keyword_span == 3


def test_corpus_format_inference():
    config = config_from_dict(minimal_dict(corpus={"path": "corpus.tsv"}))
    assert config.resolved_corpus_format() == "tsv"
    config = config_from_dict(minimal_dict())
    assert config.resolved_corpus_format() == "jsonl"
    config = config_from_dict(minimal_dict(corpus={"path": "c.dat", "format": "tsv"}))
    assert config.resolved_corpus_format() == "tsv"


def test_validate_paths_names_missing_path(tmp_path):
    config = config_from_dict(minimal_dict(), base_dir=tmp_path)
    with pytest.raises(ConfigError, match="corpus"):
        config.validate_paths()


def test_config_to_dict_snapshot():
    snapshot = config_to_dict(config_from_dict(minimal_dict()))
    assert snapshot["guided_n"] == 2000
    assert snapshot["enrichment"]["keyword_span"] == 3
    assert snapshot["embedders"]["rerank1"]["kind"] == "deterministic"


def test_preset_cast19_values():
    config = load_preset("cast19")
    assert config.guided_n == 2000
    assert config.final_keep == 10
    assert config.enrichment.keyword_top_docs == 4
    assert config.enrichment.keyword_span == 15
    assert config.enrichment.answer_top_docs == 6
    assert config.filter_threshold == 1.19


def test_preset_cast20_values():
    config = load_preset("cast20")
    assert config.enrichment.keyword_top_docs == 5
    assert config.enrichment.keyword_span == 5
    assert config.enrichment.answer_top_docs == 4
    assert config.filter_threshold == 0.525
    assert config.mrr_rel_threshold == 2


def test_unknown_preset():
    with pytest.raises(ConfigError, match="cast19"):
        load_preset("cast21")
