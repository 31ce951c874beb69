"""Schema-driven extraction of target-model results from table LaTeX.

The extractor prompts with a fixed record template and a single target
model per pass; the augmenter reruns every extracted record against the
whole-paper context. Model responses are JSON-ish at best, so parsing is
a tolerant object scanner rather than ``json.loads`` with a prayer.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace

from .gateway import LlmGateway, PromptTemplate
from .latex import ContextText, TableCandidate

logger = logging.getLogger(__name__)

MISSING = "xx"
FAILED_TOKEN = "<FAILED>"

RECORD_FIELDS = (
    "value",
    "dataset",
    "dataset_citation_tag",
    "subset",
    "model_name",
    "metric",
    "prompting_method",
    "number_of_shots",
)


@dataclass(frozen=True)
class TargetModel:
    """One of the tracked model families and its variant fencing.

    ``version_inclusions`` are dated snapshots that still count as the
    family; ``variant_exclusions`` are look-alikes that must not.
    """

    canonical_name: str
    prompt_name: str
    variant_exclusions: tuple[str, ...] = ()
    version_inclusions: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = set(self.variant_exclusions) & set(self.version_inclusions)
        if overlap:
            raise ValueError(f"patterns both included and excluded: {sorted(overlap)}")


TARGET_MODELS: tuple[TargetModel, ...] = (
    TargetModel(
        canonical_name="GPT-4",
        prompt_name="GPT-4",
        variant_exclusions=("GPT-4o", "GPT-4-v", "Deplot + GPT-4"),
        version_inclusions=("GPT-4", "GPT-4-0828", "GPT-4-0623", "GPT-4-0314"),
    ),
    TargetModel(
        canonical_name="GPT-4o",
        prompt_name="GPT-4o",
        variant_exclusions=("GPT-4", "GPT-4-o1", "GPT4-Turbo", "GPT4-V"),
    ),
    TargetModel(
        canonical_name="Claude3-Opus",
        prompt_name="Claude3 Opus",
        variant_exclusions=("Claude3 Sonnet", "Claude3 Haiku", "Claude2", "Claude 3.5"),
    ),
    TargetModel(
        canonical_name="Gemini1.0-Pro",
        prompt_name="Gemini 1.0 Pro",
        variant_exclusions=("Gemini 1.5", "Gemini 1.5 Pro", "Gemini Ultra", "Gemini Flash"),
    ),
)


@dataclass
class ExtractionRecord:
    """One experimental result with the eight template attributes.

    Any attribute may hold the ``xx`` sentinel for values the source paper
    never reported. ``original`` snapshots the pre-augmentation fields for
    the human-verification export; ``flags`` accumulates quality notes.
    """

    paper_id: str
    table_index: int
    value: str = MISSING
    dataset: str = MISSING
    dataset_citation_tag: str = MISSING
    subset: str = MISSING
    model_name: str = MISSING
    metric: str = MISSING
    prompting_method: str = MISSING
    number_of_shots: str = MISSING
    flags: list[str] = field(default_factory=list)
    original: dict | None = None

    def fields(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in RECORD_FIELDS}


# ---------------------------------------------------------------------------
# Tolerant template parsing
# ---------------------------------------------------------------------------

_KV_RE = re.compile(
    r"""["']?([A-Za-z_][A-Za-z0-9_ ]*?)["']?\s*:\s*("(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*'|[^,}{]+)""",
)


def _coerce(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return MISSING
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value).strip()


def _object_spans(text: str) -> list[str]:
    """Balanced-brace object spans, skipping content inside quotes."""
    spans = []
    depth = 0
    start = -1
    quote = ""
    for pos, ch in enumerate(text):
        if quote:
            if ch == quote and text[pos - 1] != "\\":
                quote = ""
            continue
        if ch in "\"'" and depth > 0:
            quote = ch
        elif ch == "{":
            if depth == 0:
                start = pos
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append(text[start:pos + 1])
    return spans


def _parse_object(span: str) -> dict[str, str] | None:
    """Parse one {...} span into template fields; None if nothing matched."""
    try:
        raw = json.loads(span)
        if isinstance(raw, dict):
            parsed = {str(k).strip().lower(): _coerce(v) for k, v in raw.items()}
        else:
            parsed = None
    except (json.JSONDecodeError, ValueError):
        parsed = None
    if parsed is None:
        parsed = {}
        for key, value in _KV_RE.findall(span[1:-1]):
            value = value.strip().rstrip(",").strip()
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            parsed[key.strip().lower()] = value.strip()
    fields_found = {k: v for k, v in parsed.items() if k in RECORD_FIELDS}
    if not fields_found:
        return None
    return {name: fields_found.get(name, MISSING) or MISSING for name in RECORD_FIELDS}


def parse_record_template(text: str, paper_id: str = "", table_index: int = 0) -> list[ExtractionRecord]:
    """Scan LLM output for template objects, skipping prose and broken lines.

    Accepts single or double quotes, trailing commas, and multiple objects
    per line. Unknown keys are ignored and missing keys filled with the
    sentinel. Fully unparseable text yields an empty list.
    """
    records = []
    for span in _object_spans(text):
        parsed = _parse_object(span)
        if parsed is None:
            logger.debug("skipping unparseable object span: %.80r", span)
            continue
        records.append(ExtractionRecord(paper_id=paper_id, table_index=table_index, **parsed))
    return records


# ---------------------------------------------------------------------------
# Cell value repair
# ---------------------------------------------------------------------------

_TEX_WRAP_RE = re.compile(
    r"\\(?:textbf|textit|textsc|texttt|emph|mathbf|mathrm|bm|underline|uline|best|second)\s*\{([^{}]*)\}"
)
_TEX_CMD_RE = re.compile(r"\\[A-Za-z]+\*?")
_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def clean_numeric_cell(raw: str) -> tuple[float | None, bool]:
    """(parsed number, had extra numbers) for a raw table cell.

    Strips font commands, math dollars, percent signs, and the spread half
    of ``mean ± spread`` cells; the first number wins when several remain.
    """
    text = raw
    for _ in range(3):  # nested wrappers
        new = _TEX_WRAP_RE.sub(r"\1", text)
        if new == text:
            break
        text = new
    for marker in ("\\pm", "±", "+/-"):
        pos = text.find(marker)
        if pos >= 0:
            text = text[:pos]
    text = _TEX_CMD_RE.sub(" ", text)
    text = text.replace("$", " ").replace("%", " ").replace("{", " ").replace("}", " ")
    matches = _NUMBER_RE.findall(text)
    if not matches:
        return None, False
    return float(matches[0]), len(matches) > 1


def strip_value_markup(raw: str) -> float | None:
    """Numeric content of a marked-up cell, or None when unparseable."""
    value, _ = clean_numeric_cell(raw)
    return value


# ---------------------------------------------------------------------------
# Extraction and augmentation
# ---------------------------------------------------------------------------

_EXTRACTION_TEMPLATE = PromptTemplate.load("extraction")
_AUGMENTATION_TEMPLATE = PromptTemplate.load("augmentation")


def records_as_json_lines(records: list[ExtractionRecord]) -> str:
    return "\n".join(
        json.dumps(record.fields(), ensure_ascii=False) for record in records
    )


def extract_records(
    candidate: TableCandidate,
    target: TargetModel,
    gateway: LlmGateway,
) -> list[ExtractionRecord] | None:
    """Records for one target model from one table; None when the model
    reports the table holds no target results."""
    prompt = _EXTRACTION_TEMPLATE.render(
        target_model=target.prompt_name, table_latex=candidate.latex
    )
    response = gateway.complete(prompt)
    records = parse_record_template(
        response, paper_id=candidate.paper_id, table_index=candidate.table_index
    )
    if not records and FAILED_TOKEN in response:
        return None
    return records


def augment_records(
    records: list[ExtractionRecord],
    candidate: TableCandidate,
    context: ContextText,
    gateway: LlmGateway,
) -> list[ExtractionRecord]:
    """Second pass over a table's records with whole-paper context.

    The response must come back with one object per input record; anything
    else keeps the originals (flagged). A field that held a concrete value
    never regresses to the sentinel: the older value is kept and flagged.
    Every output record snapshots its pre-augmentation fields.
    """
    if not records:
        raise ValueError("augment_records needs at least one record")
    prompt = _AUGMENTATION_TEMPLATE.render(
        records=records_as_json_lines(records),
        table_latex=candidate.latex,
        context=context.text,
    )
    response = gateway.complete(prompt)
    augmented = parse_record_template(
        response, paper_id=candidate.paper_id, table_index=candidate.table_index
    )
    if len(augmented) != len(records):
        logger.warning(
            "%s table %d: augmentation returned %d records for %d inputs; keeping originals",
            candidate.paper_id, candidate.table_index, len(augmented), len(records))
        return [
            replace(record,
                    flags=record.flags + ["augmentation-count-mismatch"],
                    original=dict(record.fields()))
            for record in records
        ]

    merged = []
    for old, new in zip(records, augmented):
        fields = {}
        flags = list(old.flags)
        for name in RECORD_FIELDS:
            before = getattr(old, name)
            after = getattr(new, name)
            if before != MISSING and after == MISSING:
                fields[name] = before  # sentinel regressions never overwrite data
                flags.append(f"augmentation-regression:{name}")
            else:
                fields[name] = after
        merged.append(ExtractionRecord(
            paper_id=old.paper_id,
            table_index=old.table_index,
            flags=flags,
            original=dict(old.fields()),
            **fields,
        ))
    return merged
