"""End-to-end orchestration: index, reformulate, evaluate, sweep.

Each command is a plain function over a :class:`PipelineConfig`; the CLI is a
thin argparse wrapper. Turns are processed by a bounded worker pool, but every
artifact is written once, sorted by (conversation_id, turn_id), so output
bytes never depend on completion order.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from gcqr.config import SWEEP_AXES, ConfigError, PipelineConfig, config_to_dict
from gcqr.corpus import CorpusIndex, build_index, ingest_corpus, load_index, save_index
from gcqr.embeddings import Embedder, build_embedder
from gcqr.enrichment import KeywordCandidate, augment_keywords, generate_answers, unify_answers
from gcqr.evaluation import (
    Qrels,
    evaluate_run,
    keyword_precision,
    parse_qrels,
    parse_run,
    run_entries_from_ranked,
    write_run,
)
from gcqr.filtering import EnrichmentItem, ReformulatedQuery, filter_items, unify
from gcqr.models import ConversationTurn, RankedList, turn_key_str
from gcqr.retrieval import retrieve_guided, two_stage_rerank_with_intermediate

log = logging.getLogger(__name__)

INDEX_FILENAME = "index.gcqr"
FINAL_RUN_FILENAME = "guidecqr.run"
BASELINE_RUN_FILENAME = "baseline.run"
GUIDED_STAGE1_FILENAME = "guided-stage1.run"
GUIDED_FINAL_FILENAME = "guided-final.run"
REFORMULATED_FILENAME = "reformulated.jsonl"
METRICS_FILENAME = "metrics.json"
FINAL_RUN_TAG = "guidecqr"
BASELINE_RUN_TAG = "baseline"
GUIDED_STAGE1_TAG = "guided-stage1"
GUIDED_FINAL_TAG = "guided-final"


class PipelineError(RuntimeError):
    """Fatal pipeline failure (as opposed to per-turn partial failures)."""


def load_turns(path: str | Path) -> list[ConversationTurn]:
    """Parse the queries jsonl into conversation turns, in file order."""
    path = Path(path)
    turns: list[ConversationTurn] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{path}:{lineno}: invalid json ({exc.msg})") from exc
            try:
                turns.append(
                    ConversationTurn(
                        conversation_id=str(obj["conversation_id"]),
                        turn_id=int(obj["turn_id"]),
                        raw_query=obj.get("raw_query", ""),
                        baseline_query=obj["baseline_query"],
                        history=list(obj.get("history", [])),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise PipelineError(f"{path}:{lineno}: bad turn record: {exc}") from exc
    if not turns:
        raise PipelineError(f"no turns found in {path}")
    seen: set[tuple[str, int]] = set()
    for turn in turns:
        if turn.key in seen:
            raise PipelineError(f"duplicate turn {turn.key_str} in {path}")
        seen.add(turn.key)
    return turns


def maybe_rewrite(turn: ConversationTurn, config: PipelineConfig) -> ConversationTurn:
    """Optionally refresh the baseline query via an external rewriter service.

    POST {endpoint}/rewrite with the raw query and history; the response's
    ``baseline_query`` replaces the input one. Any failure or timeout falls
    back to the baseline query supplied in the input file, so a slow or dead
    rewriter can never stall the pipeline.
    """
    if not config.rewriter_endpoint:
        return turn
    endpoint = config.rewriter_endpoint.rstrip("/")
    try:
        response = requests.post(
            f"{endpoint}/rewrite",
            json={"raw_query": turn.raw_query, "history": turn.history},
            timeout=config.rewriter_timeout,
        )
        response.raise_for_status()
        rewritten = response.json().get("baseline_query")
    except (requests.RequestException, ValueError) as exc:
        log.warning(
            "rewriter failed for %s (%s); keeping input baseline query",
            turn.key_str,
            exc,
        )
        return turn
    if not isinstance(rewritten, str) or not rewritten.strip():
        log.warning("rewriter returned no usable query for %s; keeping input", turn.key_str)
        return turn
    return ConversationTurn(
        conversation_id=turn.conversation_id,
        turn_id=turn.turn_id,
        raw_query=turn.raw_query,
        baseline_query=rewritten,
        history=turn.history,
    )


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

def cmd_index(config: PipelineConfig) -> Path:
    """Ingest the corpus and persist the versioned index artifact."""
    config.validate_paths()
    docs = ingest_corpus(config.corpus_path, config.resolved_corpus_format())
    index = build_index(docs)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    path = config.output_dir / INDEX_FILENAME
    save_index(index, path)
    log.info("indexed %d documents into %s", index.doc_count, path)
    return path


def _load_or_build_index(config: PipelineConfig) -> CorpusIndex:
    path = config.output_dir / INDEX_FILENAME
    if path.exists():
        return load_index(path)
    config.validate_paths()
    docs = ingest_corpus(config.corpus_path, config.resolved_corpus_format())
    return build_index(docs)


# ---------------------------------------------------------------------------
# reformulate
# ---------------------------------------------------------------------------

@dataclass
class TurnOutput:
    turn: ConversationTurn
    reformulated: ReformulatedQuery
    kept_items: list[EnrichmentItem]
    dropped_items: list[EnrichmentItem]
    final_ranking: RankedList
    baseline_ranking: RankedList
    guided_stage1: RankedList
    guided_final: RankedList


@dataclass
class ReformulateReport:
    final_run_path: Path
    baseline_run_path: Path
    reformulated_path: Path
    processed: int
    failures: dict[str, str]


def _stage_embedders(config: PipelineConfig) -> dict[str, Embedder]:
    return {stage: build_embedder(spec) for stage, spec in config.embedders.items()}


def _first_stage(config, index, turn, n, embedders) -> RankedList:
    return retrieve_guided(
        index,
        turn,
        n=n,
        retriever=config.retriever,
        embedder=embedders.get("retrieval"),
        bm25_k1=config.bm25_k1,
        bm25_b=config.bm25_b,
    )


def reformulate_turn(
    index: CorpusIndex,
    turn: ConversationTurn,
    config: PipelineConfig,
    embedders: dict[str, Embedder],
) -> TurnOutput:
    """Run one turn through the full reformulation pipeline."""
    doc_table = index.docs_by_id

    baseline_ranking = _first_stage(config, index, turn, config.run_depth, embedders)
    guided_initial = _first_stage(config, index, turn, config.guided_n, embedders)
    guided_final, guided_stage1 = two_stage_rerank_with_intermediate(
        guided_initial,
        turn.baseline_query,
        embedders["rerank1"],
        embedders["rerank2"],
        doc_table,
        intermediate_keep=config.intermediate_keep,
        final_keep=config.final_keep,
    )

    keywords: list[KeywordCandidate] = []
    if config.enrichment.keyword_top_docs > 0:
        keywords = augment_keywords(
            guided_final, turn, config.enrichment, doc_table, embedders["keyword"]
        )
    unified_answer = ""
    if config.enrichment.answer_top_docs > 0:
        spans = generate_answers(
            guided_final, turn, config.enrichment, doc_table,
            config.extractor, embedders["answer"],
        )
        unified_answer = unify_answers(spans)

    items = [EnrichmentItem(kind="keyword", text=kw.text) for kw in keywords]
    answer_item = None
    if unified_answer:
        answer_item = EnrichmentItem(kind="answer", text=unified_answer)
        items.append(answer_item)

    kept, dropped = filter_items(
        items,
        turn,
        config.filter_threshold,
        embedders["filter"],
        history_aggregation=config.history_aggregation,
    )
    kept_ids = {id(item) for item in kept}
    kept_keywords = [
        kw for kw, item in zip(keywords, items) if id(item) in kept_ids
    ]
    kept_answer = unified_answer if answer_item is not None and id(answer_item) in kept_ids else ""

    reformulated = unify(turn, kept_keywords, kept_answer)

    final_query_turn = ConversationTurn(
        conversation_id=turn.conversation_id,
        turn_id=turn.turn_id,
        raw_query=turn.raw_query,
        baseline_query=reformulated.final_text,
        history=turn.history,
    )
    final_ranking = _first_stage(config, index, final_query_turn, config.run_depth, embedders)

    return TurnOutput(
        turn=turn,
        reformulated=reformulated,
        kept_items=kept,
        dropped_items=dropped,
        final_ranking=final_ranking,
        baseline_ranking=baseline_ranking,
        guided_stage1=guided_stage1,
        guided_final=guided_final,
    )


def _reformulated_record(output: TurnOutput) -> dict:
    return {
        "conversation_id": output.turn.conversation_id,
        "turn_id": output.turn.turn_id,
        "baseline": output.reformulated.baseline,
        "kept_keywords": output.reformulated.kept_keywords,
        "kept_answer": output.reformulated.kept_answer,
        "final_text": output.reformulated.final_text,
        "dropped": [
            {"text": item.text, "kind": item.kind, "filter_score": item.filter_score}
            for item in output.dropped_items
        ],
    }


def cmd_reformulate(config: PipelineConfig) -> ReformulateReport:
    """Reformulate every turn and emit both run files plus the query artifact.

    A failing turn is logged and skipped; the remaining turns still run, and
    the failure map in the report drives the CLI's partial-failure exit code.
    """
    config.validate_paths()
    index = _load_or_build_index(config)
    turns = load_turns(config.queries_path)
    turns = [maybe_rewrite(turn, config) for turn in turns]
    embedders = _stage_embedders(config)
    log.info(
        "keyword mining: %d per document from the top %d documents, n-gram range %s",
        config.enrichment.keyword_span,
        config.enrichment.keyword_top_docs,
        config.enrichment.ngram_range,
    )

    workers = config.workers or os.cpu_count() or 1
    outputs: dict[tuple[str, int], TurnOutput] = {}
    failures: dict[str, str] = {}

    def job(turn: ConversationTurn):
        return reformulate_turn(index, turn, config, embedders)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for turn, result in zip(turns, pool.map(_trap, [job] * len(turns), turns)):
            if isinstance(result, Exception):
                log.error("turn %s failed: %s", turn.key_str, result)
                failures[turn.key_str] = str(result)
            else:
                outputs[turn.key] = result

    ordered = [outputs[key] for key in sorted(outputs)]
    config.output_dir.mkdir(parents=True, exist_ok=True)

    final_path = config.output_dir / FINAL_RUN_FILENAME
    baseline_path = config.output_dir / BASELINE_RUN_FILENAME
    reformulated_path = config.output_dir / REFORMULATED_FILENAME

    final_entries = []
    baseline_entries = []
    stage1_entries = []
    guided_entries = []
    for output in ordered:
        qid = output.turn.key_str
        final_entries.extend(
            run_entries_from_ranked(qid, output.final_ranking.entries, FINAL_RUN_TAG)
        )
        baseline_entries.extend(
            run_entries_from_ranked(qid, output.baseline_ranking.entries, BASELINE_RUN_TAG)
        )
        stage1_entries.extend(
            run_entries_from_ranked(qid, output.guided_stage1.entries, GUIDED_STAGE1_TAG)
        )
        guided_entries.extend(
            run_entries_from_ranked(qid, output.guided_final.entries, GUIDED_FINAL_TAG)
        )
    write_run(final_entries, final_path)
    write_run(baseline_entries, baseline_path)
    write_run(stage1_entries, config.output_dir / GUIDED_STAGE1_FILENAME)
    write_run(guided_entries, config.output_dir / GUIDED_FINAL_FILENAME)

    with reformulated_path.open("w", encoding="utf-8", newline="\n") as fh:
        for output in ordered:
            fh.write(json.dumps(_reformulated_record(output), ensure_ascii=True) + "\n")

    with (config.output_dir / "resolved_config.json").open(
        "w", encoding="utf-8", newline="\n"
    ) as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")

    log.info(
        "reformulated %d/%d turns -> %s", len(ordered), len(turns), final_path
    )
    return ReformulateReport(
        final_run_path=final_path,
        baseline_run_path=baseline_path,
        reformulated_path=reformulated_path,
        processed=len(ordered),
        failures=failures,
    )


def _trap(fn, turn):
    try:
        return fn(turn)
    except Exception as exc:  # partial-failure policy: the turn fails, the run continues
        return exc


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _keyword_precision_report(config: PipelineConfig, qrels: Qrels) -> dict | None:
    reformulated_path = config.output_dir / REFORMULATED_FILENAME
    if not reformulated_path.exists():
        return None
    try:
        index = _load_or_build_index(config)
    except Exception as exc:  # corpus unavailable: skip the diagnostic
        log.warning("keyword precision skipped: %s", exc)
        return None
    doc_table = index.docs_by_id
    per_query: dict[str, float] = {}
    with reformulated_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            qid = turn_key_str(str(record["conversation_id"]), int(record["turn_id"]))
            texts = list(record.get("kept_keywords", []))
            texts.extend(
                d["text"] for d in record.get("dropped", []) if d.get("kind") == "keyword"
            )
            if not texts:
                continue
            candidates = [
                KeywordCandidate(text=t, source_doc="", score=0.0) for t in texts
            ]
            per_query[qid] = keyword_precision(candidates, qrels, qid, doc_table)
    if not per_query:
        return None
    return {
        "mean": sum(per_query.values()) / len(per_query),
        "per_query": per_query,
    }


def cmd_evaluate(config: PipelineConfig, run_path: str | Path | None = None) -> dict:
    """Evaluate a run file, or both pipeline runs plus their deltas.

    With ``run_path`` the report covers that single run. Without it, the
    enriched and baseline runs from the output directory are both evaluated
    and the report carries their metric deltas. When the reformulated-queries
    artifact is present, the keyword precision diagnostic over the augmented
    keywords is included.
    """
    if config.qrels_path is None:
        raise ConfigError("evaluation requires qrels.path in the config")
    if not Path(config.qrels_path).exists():
        raise ConfigError(f"qrels path does not exist: {config.qrels_path}")
    qrels = parse_qrels(config.qrels_path)

    if run_path is not None:
        run = parse_run(run_path)
        report = evaluate_run(
            run, qrels, rel_threshold=config.mrr_rel_threshold, ndcg_k=config.ndcg_k
        )
        report["run_path"] = str(run_path)
        metrics_name = f"metrics-{Path(run_path).stem}.json"
    else:
        final_path = config.output_dir / FINAL_RUN_FILENAME
        baseline_path = config.output_dir / BASELINE_RUN_FILENAME
        if not final_path.exists() or not baseline_path.exists():
            raise ConfigError(
                f"run files not found in {config.output_dir}; run reformulate first"
            )
        enriched = evaluate_run(
            parse_run(final_path), qrels,
            rel_threshold=config.mrr_rel_threshold, ndcg_k=config.ndcg_k,
        )
        baseline = evaluate_run(
            parse_run(baseline_path), qrels,
            rel_threshold=config.mrr_rel_threshold, ndcg_k=config.ndcg_k,
        )
        ndcg_key = f"NDCG@{config.ndcg_k}"
        report = {
            "MRR": enriched["MRR"],
            ndcg_key: enriched[ndcg_key],
            "per_query": enriched["per_query"],
            "evaluated_queries": enriched["evaluated_queries"],
            "rel_threshold": config.mrr_rel_threshold,
            "baseline": baseline,
            "delta": {
                "MRR": enriched["MRR"] - baseline["MRR"],
                ndcg_key: enriched[ndcg_key] - baseline[ndcg_key],
            },
            "run_queries_without_judgments": enriched["run_queries_without_judgments"],
            "judged_queries_missing_from_run": enriched["judged_queries_missing_from_run"],
        }
        metrics_name = METRICS_FILENAME

    precision = _keyword_precision_report(config, qrels)
    if precision is not None:
        report["keyword_precision"] = precision

    config.output_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = config.output_dir / metrics_name
    with metrics_path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    report["metrics_path"] = str(metrics_path)
    return report


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(config: PipelineConfig, axis: str, values: list) -> list[dict]:
    """Reformulate + evaluate once per axis value; emit a csv/json grid."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; available: {', '.join(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep values must be non-empty")
    if config.qrels_path is None:
        raise ConfigError("sweep requires qrels.path in the config")

    ndcg_key = f"NDCG@{config.ndcg_k}"
    rows: list[dict] = []
    for value in values:
        row = {"axis": axis, "value": value}
        try:
            derived = _apply_axis(config, axis, value)
            derived = derived.with_overrides(
                output_dir=config.output_dir / f"sweep_{axis}_{value}"
            )
            reformulate = cmd_reformulate(derived)
            report = cmd_evaluate(derived)
            row.update(
                {
                    "MRR": report["MRR"],
                    ndcg_key: report[ndcg_key],
                    "baseline_MRR": report["baseline"]["MRR"],
                    f"baseline_{ndcg_key}": report["baseline"][ndcg_key],
                    "evaluated_queries": report["evaluated_queries"],
                    "failed_turns": len(reformulate.failures),
                    "status": "ok",
                }
            )
        except Exception as exc:  # the grid records the failure and continues
            log.error("sweep value %s=%r failed: %s", axis, value, exc)
            row["status"] = f"error: {exc}"
        rows.append(row)

    config.output_dir.mkdir(parents=True, exist_ok=True)
    fieldnames = [
        "axis", "value", "MRR", ndcg_key, "baseline_MRR", f"baseline_{ndcg_key}",
        "evaluated_queries", "failed_turns", "status",
    ]
    with (config.output_dir / "sweep.csv").open(
        "w", encoding="utf-8", newline=""
    ) as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, "") for key in fieldnames})
    with (config.output_dir / "sweep.json").open(
        "w", encoding="utf-8", newline="\n"
    ) as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    return rows


def _apply_axis(config: PipelineConfig, axis: str, value) -> PipelineConfig:
    if axis == "guided_n":
        return config.with_overrides(guided_n=int(value))
    if axis == "keyword_top_docs":
        return config.with_overrides(top_docs=int(value))
    if axis == "keyword_span":
        return config.with_overrides(span=int(value))
    return config.with_overrides(filter_threshold=float(value))
