"""Line-delimited persistence for every pipeline artifact.

One JSON object per line, UTF-8, with a versioned header line so stale or
foreign files fail loudly instead of parsing into garbage. Appends never
rewrite existing lines; stages that resume read the keys already present
and skip them.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .categories import CategoryAssignment
from .descriptions import DatasetDescription
from .errors import InsufficientPapers, SchemaError
from .extraction import ExtractionRecord
from .filtering import FilterVerdict
from .ingest import PaperSource, Skip
from .latex import TableCandidate
from .normalize import (
    DatasetAliases,
    NormalizedRecord,
    canonical_metric_name,
    canonicalize_dataset,
    canonicalize_model,
    is_fine_tuned,
)
from .extraction import MISSING, clean_numeric_cell

STORE_FORMAT = "evalmine/records"
STORE_VERSION = 1


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def write_jsonl(path: str | Path, kind: str, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"format": STORE_FORMAT, "version": STORE_VERSION, "kind": kind}) + "\n")
        for row in rows:
            fh.write(_dumps(row) + "\n")


def read_jsonl(path: str | Path, kind: str | None = None) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            return []
        header = json.loads(header_line)
        if header.get("format") != STORE_FORMAT:
            raise SchemaError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != STORE_VERSION:
            raise SchemaError(f"{path}: unsupported version {header.get('version')!r}")
        if kind is not None and header.get("kind") != kind:
            raise SchemaError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


# ---------------------------------------------------------------------------
# Codecs
# ---------------------------------------------------------------------------

def paper_to_dict(paper: PaperSource) -> dict:
    return {
        "arxiv_id": paper.arxiv_id,
        "categories": sorted(paper.categories),
        "published": paper.published,
        "latex": paper.latex,
        "bibliography": paper.bibliography,
        "title": paper.title,
    }


def paper_from_dict(row: dict) -> PaperSource:
    return PaperSource(
        arxiv_id=row["arxiv_id"],
        categories=frozenset(row["categories"]),
        published=row["published"],
        latex=row["latex"],
        bibliography=dict(row.get("bibliography", {})),
        title=row.get("title", ""),
    )


def candidate_to_dict(candidate: TableCandidate) -> dict:
    return {
        "paper_id": candidate.paper_id,
        "table_index": candidate.table_index,
        "latex": candidate.latex,
        "caption": candidate.caption,
    }


def candidate_from_dict(row: dict) -> TableCandidate:
    return TableCandidate(
        paper_id=row["paper_id"], table_index=row["table_index"],
        latex=row["latex"], caption=row.get("caption", ""))


def verdict_to_dict(verdict: FilterVerdict) -> dict:
    return {
        "paper_id": verdict.paper_id,
        "table_index": verdict.table_index,
        "keyword_pass": verdict.keyword_pass,
        "leaderboard": verdict.leaderboard,
        "reason": verdict.reason,
    }


def verdict_from_dict(row: dict) -> FilterVerdict:
    return FilterVerdict(
        paper_id=row["paper_id"], table_index=row["table_index"],
        keyword_pass=row["keyword_pass"], leaderboard=row["leaderboard"],
        reason=row.get("reason", ""))


def extraction_to_dict(record: ExtractionRecord) -> dict:
    row = {"paper_id": record.paper_id, "table_index": record.table_index}
    row.update(record.fields())
    row["flags"] = list(record.flags)
    if record.original is not None:
        row["original_extracted_dictionary"] = record.original
    return row


def extraction_from_dict(row: dict) -> ExtractionRecord:
    return ExtractionRecord(
        paper_id=row["paper_id"],
        table_index=row["table_index"],
        value=row.get("value", MISSING),
        dataset=row.get("dataset", MISSING),
        dataset_citation_tag=row.get("dataset_citation_tag", MISSING),
        subset=row.get("subset", MISSING),
        model_name=row.get("model_name", MISSING),
        metric=row.get("metric", MISSING),
        prompting_method=row.get("prompting_method", MISSING),
        number_of_shots=row.get("number_of_shots", MISSING),
        flags=list(row.get("flags", [])),
        original=row.get("original_extracted_dictionary"),
    )


def normalized_to_dict(record: NormalizedRecord) -> dict:
    row = {
        "record_id": record.record_id,
        "paper_id": record.paper_id,
        "table_index": record.table_index,
        "value": record.value,
        "dataset": record.dataset,
        "dataset_citation_tag": record.dataset_citation_tag,
        "subset": record.subset,
        "model_name": record.model_name,
        "metric": record.metric,
        "prompting_method": record.prompting_method,
        "number_of_shots": record.number_of_shots,
        "canonical_model": record.canonical_model,
        "canonical_dataset": record.canonical_dataset,
        "canonical_metric": record.canonical_metric,
        "scaled_value": record.scaled_value,
        "description_source": record.description_source,
        "flags": list(record.flags),
    }
    if record.original is not None:
        row["original_extracted_dictionary"] = record.original
    if record.extra:
        row["extra"] = record.extra
    return row


def normalized_from_dict(row: dict) -> NormalizedRecord:
    return NormalizedRecord(
        record_id=row["record_id"],
        paper_id=row["paper_id"],
        table_index=row["table_index"],
        value=row["value"],
        dataset=row["dataset"],
        dataset_citation_tag=row.get("dataset_citation_tag", MISSING),
        subset=row["subset"],
        model_name=row["model_name"],
        metric=row["metric"],
        prompting_method=row["prompting_method"],
        number_of_shots=row["number_of_shots"],
        canonical_model=row["canonical_model"],
        canonical_dataset=row["canonical_dataset"],
        canonical_metric=row["canonical_metric"],
        scaled_value=float(row["scaled_value"]),
        description_source=row.get("description_source", ""),
        flags=list(row.get("flags", [])),
        original=row.get("original_extracted_dictionary"),
        extra=dict(row.get("extra", {})),
    )


def description_to_dict(description: DatasetDescription, key: tuple[str, str]) -> dict:
    return {
        "canonical_dataset": key[0],
        "subset": key[1],
        "dataset": description.dataset,
        "summary": description.summary,
        "task_explanation": description.task_explanation,
        "subset_description": description.subset_description,
        "source": description.source,
        "valid": description.valid,
    }


def description_from_dict(row: dict) -> tuple[tuple[str, str], DatasetDescription]:
    key = (row["canonical_dataset"], row["subset"])
    return key, DatasetDescription(
        dataset=row["dataset"], subset=row["subset"], summary=row["summary"],
        task_explanation=row["task_explanation"],
        subset_description=row.get("subset_description", ""),
        source=row["source"], valid=row.get("valid", True))


def assignment_to_dict(assignment: CategoryAssignment) -> dict:
    return {
        "record_id": assignment.record_id,
        "labels": sorted(assignment.labels),
        "flagged": assignment.flagged,
    }


def assignment_from_dict(row: dict) -> CategoryAssignment:
    return CategoryAssignment(
        record_id=row["record_id"], labels=frozenset(row["labels"]),
        flagged=row.get("flagged", False))


def skip_to_dict(skip: Skip) -> dict:
    return {"entry": skip.entry, "reason": skip.reason}


# ---------------------------------------------------------------------------
# Record store
# ---------------------------------------------------------------------------

class RecordStore:
    """Append-only normalized-record file with a (paper, table) index."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def read(self) -> list[NormalizedRecord]:
        return [normalized_from_dict(row) for row in read_jsonl(self.path, kind="normalized")]

    def append(self, records: list[NormalizedRecord]) -> None:
        new_file = not self.path.exists()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            if new_file:
                fh.write(_dumps({"format": STORE_FORMAT, "version": STORE_VERSION,
                                 "kind": "normalized"}) + "\n")
            for record in records:
                fh.write(_dumps(normalized_to_dict(record)) + "\n")

    def keys(self) -> set[tuple[str, int]]:
        return {(r.paper_id, r.table_index) for r in self.read()}


def write_records(store: RecordStore, records: list[NormalizedRecord]) -> None:
    store.append(records)


def read_records(store: RecordStore) -> list[NormalizedRecord]:
    return store.read()


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass
class StatsOverview:
    total_records: int
    unique_datasets: int
    source_papers: int
    unique_tables: int
    per_model: dict[str, int]
    missing_subset: int
    missing_prompting: int
    missing_shots: int
    description_sources: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "total_records": self.total_records,
            "unique_datasets": self.unique_datasets,
            "source_papers": self.source_papers,
            "unique_tables": self.unique_tables,
            "per_model": dict(sorted(self.per_model.items())),
            "missing_subset": self.missing_subset,
            "missing_prompting": self.missing_prompting,
            "missing_shots": self.missing_shots,
            "description_sources": dict(sorted(self.description_sources.items())),
        }


def stats_overview(records: list[NormalizedRecord]) -> StatsOverview:
    """Corpus-level counts: totals, uniques, per-model, missing markers,
    and description provenance."""
    per_model: dict[str, int] = {}
    sources: dict[str, int] = {}
    datasets = set()
    papers = set()
    tables = set()
    missing_subset = missing_prompting = missing_shots = 0
    for record in records:
        per_model[record.canonical_model] = per_model.get(record.canonical_model, 0) + 1
        datasets.add(record.canonical_dataset)
        papers.add(record.paper_id)
        tables.add((record.paper_id, record.table_index))
        missing_subset += record.subset == MISSING
        missing_prompting += record.prompting_method == MISSING
        missing_shots += record.number_of_shots == MISSING
        if record.description_source:
            sources[record.description_source] = sources.get(record.description_source, 0) + 1
    return StatsOverview(
        total_records=len(records),
        unique_datasets=len(datasets),
        source_papers=len(papers),
        unique_tables=len(tables),
        per_model=per_model,
        missing_subset=missing_subset,
        missing_prompting=missing_prompting,
        missing_shots=missing_shots,
        description_sources=sources,
    )


def export_annotation_sample(
    records: list[NormalizedRecord], n: int, seed: int
) -> list[NormalizedRecord]:
    """Seeded sample of n records from n distinct papers, for human checks.

    Sampling is over sorted paper ids with a seeded generator, so a fixed
    (store, n, seed) always returns the same records. Each sampled record
    keeps its pre-augmentation snapshot for verification.
    """
    by_paper: dict[str, list[NormalizedRecord]] = {}
    for record in records:
        by_paper.setdefault(record.paper_id, []).append(record)
    papers = sorted(by_paper)
    if len(papers) < n:
        raise InsufficientPapers(f"need {n} distinct papers, store has {len(papers)}")
    rng = random.Random(seed)
    chosen_papers = sorted(rng.sample(papers, n))
    sample = []
    for paper_id in chosen_papers:
        members = sorted(by_paper[paper_id], key=lambda r: r.record_id)
        sample.append(rng.choice(members))
    return sample


# ---------------------------------------------------------------------------
# Released-dataset import adapter
# ---------------------------------------------------------------------------

# published column name -> our field name
DEFAULT_IMPORT_COLUMNS = {
    "arxiv_id": "paper_id",
    "paper_id": "paper_id",
    "table": "table_index",
    "table_index": "table_index",
    "value": "value",
    "dataset": "dataset",
    "dataset_citation_tag": "dataset_citation_tag",
    "subset": "subset",
    "model": "model_name",
    "model_name": "model_name",
    "metric": "metric",
    "prompting_method": "prompting_method",
    "prompt": "prompting_method",
    "number_of_shots": "number_of_shots",
    "shots": "number_of_shots",
    "dataset_description": "dataset_description",
    "description_source": "description_source",
    "original_extracted_dictionary": "original_extracted_dictionary",
}

# published description-source spellings -> our enum
DEFAULT_SOURCE_VALUES = {
    "internal_knowledge": "internal_knowledge",
    "table_paper": "table_paper",
    "linked_dataset_paper": "linked_dataset_paper",
    "gpt-4o": "internal_knowledge",
    "source paper of the table": "table_paper",
    "source paper of the linked dataset": "linked_dataset_paper",
}


@dataclass
class ImportOutcome:
    records: list[NormalizedRecord]
    descriptions: dict[tuple[str, str], DatasetDescription]
    rejected: list[tuple[dict, str]]  # (raw row, reason)


def import_released(
    path: str | Path,
    column_mapping: dict[str, str] | None = None,
    source_values: dict[str, str] | None = None,
    aliases: DatasetAliases | None = None,
) -> ImportOutcome:
    """Load a published record dump into the native store schema.

    Accepts JSONL (optionally with our header line) whose columns are
    mapped through ``column_mapping``; unmapped columns are preserved
    verbatim under ``extra``. Published values are already on the 0-100
    scale, so no rescaling happens here; model, dataset, and metric names
    still go through canonicalization, and rows that don't survive it are
    returned with reasons rather than dropped silently.
    """
    columns = {k.lower(): v for k, v in (column_mapping or DEFAULT_IMPORT_COLUMNS).items()}
    sources_map = {k.lower(): v for k, v in (source_values or DEFAULT_SOURCE_VALUES).items()}
    aliases = aliases if aliases is not None else DatasetAliases.bundled()

    rows: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if row.get("format") == STORE_FORMAT:  # tolerate our own header
                continue
            rows.append(row)

    records: list[NormalizedRecord] = []
    descriptions: dict[tuple[str, str], DatasetDescription] = {}
    rejected: list[tuple[dict, str]] = []
    counter: dict[tuple[str, int], int] = {}
    for row in rows:
        mapped: dict[str, object] = {}
        extra: dict[str, object] = {}
        for column, cell in row.items():
            target = columns.get(str(column).lower())
            if target:
                mapped[target] = cell
            else:
                extra[str(column)] = cell

        paper_id = str(mapped.get("paper_id", "")).strip()
        if not paper_id:
            rejected.append((row, "missing-paper-id"))
            continue
        try:
            table_index = int(mapped.get("table_index", 0))
        except (TypeError, ValueError):
            rejected.append((row, "bad-table-index"))
            continue

        def text_field(name: str) -> str:
            cell = mapped.get(name, MISSING)
            if cell is None:
                return MISSING
            text = str(cell).strip()
            return text if text else MISSING

        dataset = text_field("dataset")
        model_name = text_field("model_name")
        metric = text_field("metric")
        if dataset == MISSING:
            rejected.append((row, "missing-dataset"))
            continue
        if model_name == MISSING:
            rejected.append((row, "missing-model"))
            continue
        canonical_model = canonicalize_model(model_name)
        if canonical_model is None:
            rejected.append((row, "not-target-model"))
            continue
        canonical_metric = canonical_metric_name(metric) if metric != MISSING else None
        if canonical_metric is None:
            rejected.append((row, "metric-not-approved"))
            continue
        raw_value = mapped.get("value", MISSING)
        value, _ = clean_numeric_cell(str(raw_value)) if raw_value not in (None, MISSING) else (None, False)
        if value is None:
            rejected.append((row, "unparseable-value"))
            continue

        shots = text_field("number_of_shots")
        if shots != MISSING:
            try:
                shots = str(int(float(shots)))
            except ValueError:
                shots = MISSING

        source_raw = text_field("description_source")
        description_source = sources_map.get(source_raw.lower(), "") if source_raw != MISSING else ""

        key = (paper_id, table_index)
        counter[key] = counter.get(key, 0) + 1
        subset = text_field("subset")
        canonical_dataset = canonicalize_dataset(dataset, aliases)
        original = mapped.get("original_extracted_dictionary")
        if isinstance(original, str):
            try:
                original = json.loads(original)
            except json.JSONDecodeError:
                original = {"raw": original}
        record = NormalizedRecord(
            record_id=f"{paper_id}:{table_index}:{counter[key]}",
            paper_id=paper_id,
            table_index=table_index,
            value=str(raw_value),
            dataset=dataset,
            dataset_citation_tag=text_field("dataset_citation_tag"),
            subset=subset,
            model_name=model_name,
            metric=metric,
            prompting_method=text_field("prompting_method"),
            number_of_shots=shots,
            canonical_model=canonical_model,
            canonical_dataset=canonical_dataset,
            canonical_metric=canonical_metric,
            scaled_value=value,
            description_source=description_source,
            original=original if isinstance(original, dict) else None,
            extra=extra,
        )
        if is_fine_tuned(record):
            rejected.append((row, "fine-tuned"))
            continue
        records.append(record)

        desc_key = (canonical_dataset, subset)
        if desc_key not in descriptions:
            text = str(mapped.get("dataset_description") or "").strip()
            if text:
                descriptions[desc_key] = _description_from_text(dataset, subset, text, description_source)
    return ImportOutcome(records=records, descriptions=descriptions, rejected=rejected)


def _description_from_text(
    dataset: str, subset: str, text: str, source: str
) -> DatasetDescription:
    """Best-effort split of a published description blob into our fields."""
    from .descriptions import _parse_description  # narrow import, shared parser

    parsed = _parse_description(text, dataset, subset, source or "table_paper")
    if parsed is not None:
        return parsed
    return DatasetDescription(
        dataset=dataset, subset=subset, summary=text, task_explanation="",
        subset_description="", source=source or "table_paper", valid=True)
