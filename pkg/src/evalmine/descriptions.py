"""Two-stage dataset description generation.

Stage one asks the model from its own knowledge, with an explicit refusal
token for datasets it does not recognize. A refusal (or an unusable reply)
escalates to grounded extraction, first from the paper the table came
from, then from the dataset's own paper resolved through its citation tag.
Descriptions that survive no stage are marked invalid and dropped later.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Callable

from .extraction import MISSING, ExtractionRecord
from .gateway import LlmGateway, PromptTemplate
from .ingest import PaperSource
from .latex import build_context, resolve_citation

logger = logging.getLogger(__name__)

REFUSAL_TOKEN = "<UNSURE>"

SOURCE_INTERNAL = "internal_knowledge"
SOURCE_TABLE_PAPER = "table_paper"
SOURCE_LINKED_PAPER = "linked_dataset_paper"

_KNOWLEDGE_TEMPLATE = PromptTemplate.load("describe_knowledge")
_GROUNDED_TEMPLATE = PromptTemplate.load("describe_grounded")


@dataclass
class DatasetDescription:
    dataset: str
    subset: str
    summary: str
    task_explanation: str
    subset_description: str  # empty exactly when subset is the sentinel
    source: str
    valid: bool = True

    @property
    def text(self) -> str:
        parts = [f"Dataset Summary: {self.summary}",
                 f"Task Explanation: {self.task_explanation}"]
        if self.subset_description:
            parts.append(f"Subset Description: {self.subset_description}")
        return "\n".join(parts)


def dataset_query(dataset: str, subset: str) -> str:
    """The combined name+subset string both stages prompt with."""
    if subset and subset != MISSING:
        return f"{dataset} ({subset})"
    return dataset


_TEX_CMD_RE = re.compile(r"\\[A-Za-z]+\*?(?:\[[^\]]*\])?|[{}$]")
_FIELD_RE = re.compile(
    r"Dataset Summary:?\s*(?P<summary>.*?)"
    r"Task Explanation:?\s*(?P<task>.*?)"
    r"(?:Subset Description:?\s*(?P<subset>.*))?$",
    re.DOTALL | re.IGNORECASE,
)


def _strip_latex(text: str) -> str:
    return re.sub(r"\s+", " ", _TEX_CMD_RE.sub(" ", text)).strip()


def _parse_description(
    response: str, dataset: str, subset: str, source: str
) -> DatasetDescription | None:
    match = _FIELD_RE.search(response)
    if not match:
        return None
    summary = _strip_latex(match.group("summary") or "")
    task = _strip_latex(match.group("task") or "")
    subset_desc = _strip_latex(match.group("subset") or "")
    if subset_desc.lower() == MISSING:
        subset_desc = ""
    if not summary or not task:
        return None
    if subset == MISSING:
        subset_desc = ""
    elif not subset_desc:
        return None  # a named subset must come back described
    return DatasetDescription(
        dataset=dataset, subset=subset, summary=summary,
        task_explanation=task, subset_description=subset_desc, source=source)


def generate_from_knowledge(
    dataset: str, subset: str, gateway: LlmGateway
) -> DatasetDescription | None:
    """Knowledge-stage description, or None when the model refuses.

    An unusable reply counts as a refusal too: grounding is the recovery
    path either way.
    """
    if dataset == MISSING:
        raise ValueError("dataset name is the missing sentinel")
    response = gateway.complete(
        _KNOWLEDGE_TEMPLATE.render(dataset_query=dataset_query(dataset, subset)))
    if REFUSAL_TOKEN in response:
        return None
    return _parse_description(response, dataset, subset, SOURCE_INTERNAL)


def generate_from_source(
    dataset: str,
    subset: str,
    source_text: str,
    gateway: LlmGateway,
    source: str = SOURCE_TABLE_PAPER,
) -> DatasetDescription:
    """Grounded description; parse failures come back marked invalid."""
    if not source_text:
        raise ValueError("source text must be non-empty")
    response = gateway.complete(_GROUNDED_TEMPLATE.render(
        dataset_query=dataset_query(dataset, subset), source_text=source_text))
    parsed = _parse_description(response, dataset, subset, source)
    if parsed is None:
        return DatasetDescription(
            dataset=dataset, subset=subset, summary="", task_explanation="",
            subset_description="", source=source, valid=False)
    return parsed


Resolver = Callable[[str], str | None]


def describe(
    record: ExtractionRecord,
    table_source: PaperSource,
    resolver: Resolver,
    gateway: LlmGateway,
) -> DatasetDescription:
    """Knowledge first, then the table's paper, then the linked dataset paper.

    ``resolver`` maps an arXiv id to that paper's body text (or None when
    it isn't in the local corpus). The first stage that produces a usable
    description wins and names itself in ``source``.
    """
    description = generate_from_knowledge(record.dataset, record.subset, gateway)
    if description is not None:
        return description

    context = build_context(table_source)
    if context.text.strip():
        description = generate_from_source(
            record.dataset, record.subset, context.text, gateway, SOURCE_TABLE_PAPER)
        if description.valid:
            return description

    linked_text = None
    if record.dataset_citation_tag != MISSING:
        linked_id = resolve_citation(record.dataset_citation_tag, table_source)
        if linked_id:
            linked_text = resolver(linked_id)
    if linked_text:
        description = generate_from_source(
            record.dataset, record.subset, linked_text, gateway, SOURCE_LINKED_PAPER)
        if description.valid:
            return description

    logger.info("no stage produced a description for %s / %s",
                record.dataset, record.subset)
    return DatasetDescription(
        dataset=record.dataset, subset=record.subset, summary="",
        task_explanation="", subset_description="",
        source=SOURCE_LINKED_PAPER if linked_text else SOURCE_TABLE_PAPER,
        valid=False)
