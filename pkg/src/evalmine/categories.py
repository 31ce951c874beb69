"""Multi-label skill categorization and quarterly trend counting.

Classification is LLM-driven from dataset name, subset, and description.
The caller can swap in any taxonomy; the default is the ten skill labels
used throughout the analyses. Records sharing the same (dataset, subset,
description) triple are classified once and the labels fanned out.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .descriptions import DatasetDescription
from .gateway import LlmGateway, PromptTemplate
from .ingest import arxiv_id_to_quarter
from .normalize import NormalizedRecord

logger = logging.getLogger(__name__)

SKILL_CATEGORIES = (
    "Knowledge",
    "Reasoning",
    "Math",
    "Coding",
    "Multimodality",
    "Instruction Following",
    "Safety",
    "Multilinguality",
    "Tool Use",
    "Other",
)

# finer-grained reasoning-focused taxonomy for the replication analyses
REASONING_TAXONOMY = (
    "Math",
    "Symbolic and algorithmic",
    "Spatial and temporal reasoning",
    "Logical reasoning",
    "Commonsense reasoning",
    "Multi-hop QA",
    "Context-aware QA",
    "Encyclopedic knowledge",
    "Generation",
    "Text classification",
    "Entailment",
)

_CATEGORIZE_TEMPLATE = PromptTemplate.load("categorize")
_CUSTOM_TEMPLATE = PromptTemplate.load("categorize_custom")


@dataclass
class CategoryAssignment:
    record_id: str
    labels: frozenset[str]
    flagged: bool = False  # response needed the Other/parse fallback


def _match_labels(response: str, taxonomy: tuple[str, ...]) -> tuple[frozenset[str], bool]:
    """Map a comma-separated response onto taxonomy labels.

    Unrecognized labels drop out; an empty result falls back to Other
    (flagged). "Other" never co-occurs with a real label.
    """
    by_fold = {label.lower(): label for label in taxonomy}
    # tolerate the display spelling "Tool Use (Agent Framework)"
    for label in taxonomy:
        head = label.split("(")[0].strip().lower()
        by_fold.setdefault(head, label)
    matched = set()
    for part in response.replace("\n", ",").split(","):
        token = part.strip().strip(".").lower()
        if not token:
            continue
        if token in by_fold:
            matched.add(by_fold[token])
        elif token.split("(")[0].strip() in by_fold:
            matched.add(by_fold[token.split("(")[0].strip()])
    flagged = False
    if len(matched) > 1:
        matched.discard("Other")
    if not matched:
        fallback = "Other" if "Other" in taxonomy else taxonomy[-1]
        logger.debug("unrecognized category response %.60r -> %s", response, fallback)
        matched = {fallback}
        flagged = True
    return frozenset(matched), flagged


def categorize_record(
    record: NormalizedRecord,
    description: DatasetDescription | None,
    gateway: LlmGateway,
) -> CategoryAssignment:
    """Skill labels for one record under the default ten-label taxonomy."""
    description_text = description.text if description is not None and description.valid else ""
    response = gateway.complete(_CATEGORIZE_TEMPLATE.render(
        dataset=record.dataset, subset=record.subset, description=description_text))
    labels, flagged = _match_labels(response, SKILL_CATEGORIES)
    return CategoryAssignment(record_id=record.record_id, labels=labels, flagged=flagged)


def alt_categorize_record(
    record: NormalizedRecord,
    description: DatasetDescription | None,
    taxonomy: tuple[str, ...],
    gateway: LlmGateway,
) -> CategoryAssignment:
    """Same mechanics as categorize_record against a caller-supplied taxonomy."""
    if not taxonomy:
        raise ValueError("taxonomy must be non-empty")
    description_text = description.text if description is not None and description.valid else ""
    taxonomy_block = "\n".join(f"- {label}" for label in taxonomy)
    response = gateway.complete(_CUSTOM_TEMPLATE.render(
        taxonomy=taxonomy_block, dataset=record.dataset, subset=record.subset,
        description=description_text))
    labels, flagged = _match_labels(response, taxonomy)
    return CategoryAssignment(record_id=record.record_id, labels=labels, flagged=flagged)


def categorize_unique(
    records: list[NormalizedRecord],
    descriptions: dict[tuple[str, str], DatasetDescription],
    gateway: LlmGateway,
    taxonomy: tuple[str, ...] | None = None,
) -> dict[str, CategoryAssignment]:
    """Classify once per unique (dataset key, subset, description) and fan out.

    Keys are visited in sorted order so a replayed transcript always lines
    up. Returns assignments by record id.
    """
    groups: dict[tuple[str, str, str], list[NormalizedRecord]] = {}
    for record in records:
        description = descriptions.get((record.canonical_dataset, record.subset))
        text = description.text if description is not None and description.valid else ""
        groups.setdefault((record.canonical_dataset, record.subset, text), []).append(record)

    assignments: dict[str, CategoryAssignment] = {}
    for key in sorted(groups):
        members = groups[key]
        head = members[0]
        description = descriptions.get((head.canonical_dataset, head.subset))
        if taxonomy is None:
            assignment = categorize_record(head, description, gateway)
        else:
            assignment = alt_categorize_record(head, description, taxonomy, gateway)
        for member in members:
            assignments[member.record_id] = CategoryAssignment(
                record_id=member.record_id,
                labels=assignment.labels,
                flagged=assignment.flagged)
    return assignments


def quarterly_trend(
    records: list[NormalizedRecord],
    assignments: dict[str, CategoryAssignment],
) -> dict[tuple[str, str], int]:
    """(category, quarter) -> distinct (paper, dataset, subset) triple count.

    Repeated experiments on the same dataset-subset within one paper count
    once; a multi-label record counts toward each of its labels.
    """
    triples: dict[tuple[str, str], set[tuple[str, str, str]]] = {}
    for record in records:
        assignment = assignments.get(record.record_id)
        if assignment is None:
            continue
        quarter = arxiv_id_to_quarter(record.paper_id)
        triple = (record.paper_id, record.canonical_dataset, record.subset)
        for label in assignment.labels:
            triples.setdefault((label, quarter), set()).add(triple)
    return {key: len(values) for key, values in sorted(triples.items())}
