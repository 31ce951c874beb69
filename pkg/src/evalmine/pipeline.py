"""Stage orchestration over a working directory.

Each stage reads the previous stage's file and writes its own, so runs are
resumable and any stage can be rerun in isolation. Gateway-backed stages
(filter, extract, describe, categorize) skip units already present in
their output unless forced; pure transforms just rewrite their file.
All iteration orders are sorted, which together with transcript replay
makes whole-pipeline runs byte-deterministic.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

from . import reporting, store
from .analysis import (
    COT_VS_DIRECT_MATCHED,
    FEW_VS_ZERO,
    FEWCOT_VS_ZEROCOT,
    MORE_VS_FEWER,
    NEGATIVE_TRAIT_TAXONOMY,
    DeltaObservation,
    PromptLabelMap,
    apply_correction,
    attach_categories,
    export_negative_cases,
    labels_by_dataset_subset,
    match_cot_pairs,
    match_joint,
    match_shot_pairs,
    run_category_tests,
    summarize,
    venue_filter,
)
from .categories import REASONING_TAXONOMY, categorize_unique, quarterly_trend
from .dblp import DblpClient
from .descriptions import describe
from .errors import ConfigError
from .extraction import (
    MISSING,
    TARGET_MODELS,
    ExtractionRecord,
    augment_records,
    clean_numeric_cell,
    extract_records,
)
from .filtering import DEFAULT_KEYWORDS, filter_candidates
from .gateway import LlmGateway
from .ingest import CorpusFilter, PaperSource, load_manifest, scan_corpus
from .latex import build_context, extract_tables
from .normalize import DatasetAliases, canonicalize_dataset, dedup, normalize_records

logger = logging.getLogger(__name__)

FILES = {
    "papers": "papers.jsonl",
    "skips": "skips.jsonl",
    "candidates": "candidates.jsonl",
    "verdicts": "verdicts.jsonl",
    "records_raw": "records_raw.jsonl",
    "descriptions": "descriptions.jsonl",
    "normalized": "normalized.jsonl",
    "rejected": "rejected.jsonl",
    "conflicts": "conflicts.jsonl",
    "assignments": "assignments.jsonl",
    "assignments_reasoning": "assignments_reasoning.jsonl",
    "sample": "annotation_sample.jsonl",
    "stats": "stats.json",
}


def _path(workdir: str | Path, name: str) -> Path:
    return Path(workdir) / FILES[name]


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run the {produced_by} stage first")
    return path


def load_papers(workdir: str | Path) -> dict[str, PaperSource]:
    rows = store.read_jsonl(_require(_path(workdir, "papers"), "ingest"), kind="papers")
    papers = [store.paper_from_dict(row) for row in rows]
    return {p.arxiv_id: p for p in papers}


def load_normalized(workdir: str | Path):
    rows = store.read_jsonl(_require(_path(workdir, "normalized"), "normalize"), kind="normalized")
    return [store.normalized_from_dict(row) for row in rows]


def load_descriptions(workdir: str | Path):
    rows = store.read_jsonl(_path(workdir, "descriptions"), kind="descriptions")
    return dict(store.description_from_dict(row) for row in rows)


def load_assignments(workdir: str | Path, reasoning: bool = False):
    key = "assignments_reasoning" if reasoning else "assignments"
    rows = store.read_jsonl(_path(workdir, key), kind="assignments")
    return {row["record_id"]: store.assignment_from_dict(row) for row in rows}


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_ingest(
    workdir: str | Path,
    root: str | Path,
    manifest_path: str | Path,
    date_from: str,
    date_to: str,
    categories: frozenset[str],
) -> tuple[int, int]:
    manifest = load_manifest(manifest_path)
    corpus_filter = CorpusFilter(date_from=date_from, date_to=date_to, categories=categories)
    sources, skips = scan_corpus(root, corpus_filter, manifest)
    store.write_jsonl(_path(workdir, "papers"), "papers",
                      [store.paper_to_dict(p) for p in sources])
    store.write_jsonl(_path(workdir, "skips"), "skips",
                      [store.skip_to_dict(s) for s in skips])
    return len(sources), len(skips)


def stage_tables(workdir: str | Path) -> int:
    papers = load_papers(workdir)
    candidates = []
    for arxiv_id in sorted(papers):
        candidates.extend(extract_tables(papers[arxiv_id]))
    store.write_jsonl(_path(workdir, "candidates"), "tables",
                      [store.candidate_to_dict(c) for c in candidates])
    return len(candidates)


def _load_candidates(workdir):
    rows = store.read_jsonl(_require(_path(workdir, "candidates"), "tables"), kind="tables")
    return [store.candidate_from_dict(row) for row in rows]


def stage_filter(
    workdir: str | Path,
    gateway: LlmGateway,
    keywords: frozenset[str] = DEFAULT_KEYWORDS,
) -> int:
    candidates = _load_candidates(workdir)
    candidates.sort(key=lambda c: (c.paper_id, c.table_index))
    verdicts = filter_candidates(candidates, gateway, keywords)
    store.write_jsonl(_path(workdir, "verdicts"), "verdicts",
                      [store.verdict_to_dict(v) for v in verdicts])
    return sum(v.keep for v in verdicts)


def stage_extract(
    workdir: str | Path,
    gateway: LlmGateway,
    targets=TARGET_MODELS,
    force: bool = False,
) -> int:
    """Schema extraction plus context augmentation, one unit per kept table.

    Units already present in the output are skipped on rerun unless
    ``force``; a unit that yielded no records is remembered through a
    placeholder row so reruns don't re-spend its calls.
    """
    papers = load_papers(workdir)
    candidates = {(c.paper_id, c.table_index): c for c in _load_candidates(workdir)}
    verdict_rows = store.read_jsonl(_require(_path(workdir, "verdicts"), "filter"), kind="verdicts")
    kept = [store.verdict_from_dict(row) for row in verdict_rows]
    kept = [v for v in kept if v.keep]
    kept.sort(key=lambda v: (v.paper_id, v.table_index))

    out_path = _path(workdir, "records_raw")
    done_units: set[tuple[str, int]] = set()
    existing_rows: list[dict] = []
    if out_path.exists() and not force:
        existing_rows = store.read_jsonl(out_path, kind="records_raw")
        done_units = {(row["paper_id"], row["table_index"]) for row in existing_rows}

    contexts: dict[str, object] = {}
    new_rows: list[dict] = []
    for verdict in kept:
        unit = (verdict.paper_id, verdict.table_index)
        if unit in done_units:
            continue
        candidate = candidates.get(unit)
        if candidate is None:
            logger.warning("verdict for unknown candidate %s", unit)
            continue
        table_records: list[ExtractionRecord] = []
        for target in targets:
            extracted = extract_records(candidate, target, gateway)
            if extracted:
                table_records.extend(extracted)
        if table_records:
            if candidate.paper_id not in contexts:
                contexts[candidate.paper_id] = build_context(papers[candidate.paper_id])
            table_records = augment_records(
                table_records, candidate, contexts[candidate.paper_id], gateway)
            new_rows.extend(store.extraction_to_dict(r) for r in table_records)
        else:
            new_rows.append({"paper_id": candidate.paper_id,
                             "table_index": candidate.table_index,
                             "no_records": True})

    store.write_jsonl(out_path, "records_raw", existing_rows + new_rows)
    return len(new_rows)


def load_raw_records(workdir: str | Path) -> list[ExtractionRecord]:
    rows = store.read_jsonl(_require(_path(workdir, "records_raw"), "extract"), kind="records_raw")
    return [store.extraction_from_dict(row) for row in rows if not row.get("no_records")]


def stage_describe(
    workdir: str | Path,
    gateway: LlmGateway,
    aliases: DatasetAliases | None = None,
    force: bool = False,
) -> int:
    """One description per unique (canonical dataset, subset), knowledge
    first with grounded fallbacks."""
    aliases = aliases if aliases is not None else DatasetAliases.bundled()
    papers = load_papers(workdir)
    records = load_raw_records(workdir)

    out_path = _path(workdir, "descriptions")
    existing_rows: list[dict] = []
    done: set[tuple[str, str]] = set()
    if out_path.exists() and not force:
        existing_rows = store.read_jsonl(out_path, kind="descriptions")
        done = {(row["canonical_dataset"], row["subset"]) for row in existing_rows}

    units: dict[tuple[str, str], ExtractionRecord] = {}
    for record in sorted(records, key=lambda r: (r.paper_id, r.table_index)):
        if record.dataset == MISSING:
            continue
        key = (canonicalize_dataset(record.dataset, aliases), record.subset)
        units.setdefault(key, record)

    def resolver(arxiv_id: str) -> str | None:
        paper = papers.get(arxiv_id)
        return build_context(paper).text if paper else None

    new_rows = []
    for key in sorted(units):
        if key in done:
            continue
        record = units[key]
        table_source = papers[record.paper_id]
        description = describe(record, table_source, resolver, gateway)
        new_rows.append(store.description_to_dict(description, key))
    store.write_jsonl(out_path, "descriptions", existing_rows + new_rows)
    return len(new_rows)


def stage_normalize(
    workdir: str | Path,
    aliases: DatasetAliases | None = None,
) -> tuple[int, int, int]:
    """Whitelist/scale/canonicalize, drop invalid-description records, dedup."""
    aliases = aliases if aliases is not None else DatasetAliases.bundled()
    records = load_raw_records(workdir)
    records.sort(key=lambda r: (r.paper_id, r.table_index))

    # the ==1.0 disambiguation wants the other numeric values of each table
    siblings: dict[tuple[str, int], list[float]] = {}
    for record in records:
        value, _ = clean_numeric_cell(record.value) if record.value != MISSING else (None, False)
        if value is not None:
            siblings.setdefault((record.paper_id, record.table_index), []).append(value)

    normalized, rejected = normalize_records(records, aliases, sibling_values=siblings)
    reject_rows = [{"paper_id": r.record.paper_id, "table_index": r.record.table_index,
                    "dataset": r.record.dataset, "reason": r.reason}
                   for r in rejected]

    descriptions = load_descriptions(workdir)
    if descriptions:
        kept = []
        for record in normalized:
            description = descriptions.get((record.canonical_dataset, record.subset))
            if description is None or not description.valid:
                reject_rows.append({"paper_id": record.paper_id,
                                    "table_index": record.table_index,
                                    "dataset": record.dataset,
                                    "reason": "invalid-description"})
                continue
            record.description_source = description.source
            kept.append(record)
        normalized = kept

    normalized, conflicts = dedup(normalized)
    store.write_jsonl(_path(workdir, "normalized"), "normalized",
                      [store.normalized_to_dict(r) for r in normalized])
    store.write_jsonl(_path(workdir, "rejected"), "rejected", reject_rows)
    store.write_jsonl(_path(workdir, "conflicts"), "conflicts",
                      [{"key": list(c.key),
                        "records": [store.normalized_to_dict(m) for m in c.records]}
                       for c in conflicts])
    return len(normalized), len(reject_rows), len(conflicts)


def stage_categorize(
    workdir: str | Path,
    gateway: LlmGateway,
    taxonomy_name: str = "skills",
    force: bool = False,
) -> int:
    records = load_normalized(workdir)
    descriptions = load_descriptions(workdir)
    if taxonomy_name == "skills":
        taxonomy = None
        out_key = "assignments"
    elif taxonomy_name == "reasoning":
        taxonomy = REASONING_TAXONOMY
        out_key = "assignments_reasoning"
    else:
        raise ConfigError(f"unknown taxonomy {taxonomy_name!r}")

    out_path = _path(workdir, out_key)
    if out_path.exists() and not force:
        existing = store.read_jsonl(out_path, kind="assignments")
        have = {row["record_id"] for row in existing}
        records = [r for r in records if r.record_id not in have]
        if not records:
            return 0
    else:
        existing = []

    assignments = categorize_unique(records, descriptions, gateway, taxonomy)
    rows = existing + [store.assignment_to_dict(assignments[rid]) for rid in sorted(assignments)]
    store.write_jsonl(out_path, "assignments", rows)
    return len(assignments)


def stage_analyze(
    workdir: str | Path,
    comparison: str,
    labels: PromptLabelMap,
    seed: int = 0,
    resamples: int = 100_000,
    venue_filtered: bool = False,
    dblp_client: DblpClient | None = None,
    correction_m: int = 22,
    use_reasoning_categories: bool = False,
) -> dict:
    """Run one comparison family end to end and write its report files.

    Returns a small summary dict (pair counts and output paths) for the CLI.
    """
    records = load_normalized(workdir)
    descriptions = load_descriptions(workdir)
    assignments = load_assignments(workdir, reasoning=use_reasoning_categories)
    category_labels = labels_by_dataset_subset(records, assignments)
    reports = Path(workdir) / "reports"

    if comparison == "cot":
        observations = match_cot_pairs(records, labels)
    elif comparison == "icl":
        observations = match_shot_pairs(records, FEW_VS_ZERO)
    elif comparison == "more-shots":
        observations = match_shot_pairs(records, MORE_VS_FEWER)
    elif comparison == "joint":
        observations = match_joint(records, labels)
    else:
        raise ConfigError(f"unknown comparison {comparison!r}")
    observations = attach_categories(observations, category_labels)

    outputs: dict = {"comparison": comparison, "pairs": len(observations)}
    suffix = comparison.replace("-", "_")
    reporting.write_observations_csv(reports / f"observations_{suffix}.csv", observations)
    reporting.write_per_paper_means_csv(reports / f"per_paper_means_{suffix}.csv", observations)
    reporting.write_category_summary_csv(
        reports / f"category_summary_{suffix}.csv", summarize(observations, "per_category"))

    if comparison == "joint":
        demo_rows = []
        fewcot = [o for o in observations if o.comparison == FEWCOT_VS_ZEROCOT]
        if fewcot:
            demo_rows.append((FEWCOT_VS_ZEROCOT, "all", summarize(fewcot)["overall"]))
        matched = [o for o in observations if o.comparison == COT_VS_DIRECT_MATCHED]
        for tag in ("zero-shot", "few-shot"):
            tagged = [o for o in matched if o.matched_shots_tag == tag]
            if tagged:
                demo_rows.append((COT_VS_DIRECT_MATCHED, tag, summarize(tagged)["overall"]))
        reporting.write_joint_summary_csv(reports / "joint_summary.csv", demo_rows)
        outputs["joint_summary"] = str(reports / "joint_summary.csv")

    if comparison in ("cot", "icl"):
        negatives = export_negative_cases(observations, descriptions)
        reporting.write_negative_cases(reports / f"negative_cases_{suffix}.jsonl", negatives)

    if comparison == "cot":
        taxonomy = REASONING_TAXONOMY if use_reasoning_categories else None
        total = apply_correction(
            run_category_tests(observations, resamples=resamples, seed=seed,
                               taxonomy=taxonomy),
            m=correction_m)
        filtered_results = None
        if venue_filtered:
            papers = load_papers(workdir)
            titles = {pid: papers[pid].title for pid in sorted(papers) if papers[pid].title}
            client = dblp_client or DblpClient()
            included, _report = venue_filter(titles, client)
            filtered_obs = [o for o in observations if o.paper_id in included]
            filtered_results = apply_correction(
                run_category_tests(filtered_obs, resamples=resamples, seed=seed,
                                   taxonomy=taxonomy),
                m=correction_m)
        reporting.write_test_results_csv(reports / "test_results.csv", total, filtered_results)
        outputs["test_results"] = str(reports / "test_results.csv")
    return outputs


def stage_trend(workdir: str | Path) -> Path:
    records = load_normalized(workdir)
    assignments = load_assignments(workdir)
    trend = quarterly_trend(records, assignments)
    out = Path(workdir) / "reports" / "trend.csv"
    reporting.write_trend_csv(out, trend)
    return out


def stage_stats(workdir: str | Path) -> store.StatsOverview:
    records = load_normalized(workdir)
    stats = store.stats_overview(records)
    reporting.write_stats_json(_path(workdir, "stats"), stats)
    return stats


def stage_sample(workdir: str | Path, n: int, seed: int) -> Path:
    records = load_normalized(workdir)
    sample = store.export_annotation_sample(records, n, seed)
    out = _path(workdir, "sample")
    store.write_jsonl(out, "annotation_sample",
                      [store.normalized_to_dict(r) for r in sample])
    return out


def stage_import(workdir: str | Path, released_path: str | Path,
                 mapping_path: str | Path | None = None) -> tuple[int, int]:
    """Convert a published record dump into this pipeline's store files."""
    mapping = None
    source_values = None
    if mapping_path:
        raw = json.loads(Path(mapping_path).read_text(encoding="utf-8"))
        mapping = raw.get("columns")
        source_values = raw.get("description_sources")
    outcome = store.import_released(released_path, mapping, source_values)
    store.write_jsonl(_path(workdir, "normalized"), "normalized",
                      [store.normalized_to_dict(r) for r in outcome.records])
    store.write_jsonl(_path(workdir, "descriptions"), "descriptions",
                      [store.description_to_dict(d, k) for k, d in sorted(outcome.descriptions.items())])
    store.write_jsonl(_path(workdir, "rejected"), "rejected",
                      [{"row": row, "reason": reason} for row, reason in outcome.rejected])
    return len(outcome.records), len(outcome.rejected)
