"""Canonicalization and cleanup between raw extraction and analysis.

Four jobs: map metric names onto the approved list and put bounded values
on a 0-100 scale, map model-name spellings onto the four tracked families,
drop fine-tuned results, and fold dataset-name spellings onto stable keys.
Deduplication runs last over the normalized records.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import EvalMineError
from .extraction import MISSING, ExtractionRecord, clean_numeric_cell

logger = logging.getLogger(__name__)


class OutOfRange(EvalMineError):
    """Bounded-metric value outside [0, 100] after scaling."""


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

# canonical name -> bounded to [0, 100] after scaling
APPROVED_METRICS: dict[str, bool] = {
    "Accuracy": True,
    "Exact Match": True,
    "F1": True,
    "BLEU": True,
    "Rouge": True,
    "MRR": True,
    "Precision": True,
    "Recall": True,
    "Pearson Correlation Coefficient": False,
    "MAE": False,
    "MSE": False,
}

_METRIC_SYNONYMS = {
    "acc": "Accuracy",
    "accuracy": "Accuracy",
    "em": "Exact Match",
    "exactmatch": "Exact Match",
    "f1": "F1",
    "f1score": "F1",
    "macrof1": "F1",
    "microf1": "F1",
    "bleu": "BLEU",
    "bleu4": "BLEU",
    "bleuscore": "BLEU",
    "sacrebleu": "BLEU",
    "rouge": "Rouge",
    "rouge1": "Rouge",
    "rouge2": "Rouge",
    "rougel": "Rouge",
    "rougelsum": "Rouge",
    "mrr": "MRR",
    "meanreciprocalrank": "MRR",
    "precision": "Precision",
    "prec": "Precision",
    "recall": "Recall",
    "pearson": "Pearson Correlation Coefficient",
    "pearsonr": "Pearson Correlation Coefficient",
    "pearsoncorrelation": "Pearson Correlation Coefficient",
    "pearsoncorrelationcoefficient": "Pearson Correlation Coefficient",
    "pearsonscorrelationcoefficient": "Pearson Correlation Coefficient",
    "mae": "MAE",
    "meanabsoluteerror": "MAE",
    "mse": "MSE",
    "meansquareerror": "MSE",
    "meansquarederror": "MSE",
}

_FOLD_RE = re.compile(r"[^a-z0-9]+")


def _fold(name: str) -> str:
    return _FOLD_RE.sub("", name.lower())


def canonical_metric_name(name: str) -> str | None:
    """Approved metric for a surface spelling, else None."""
    if name in APPROVED_METRICS:
        return name
    return _METRIC_SYNONYMS.get(_fold(name))


def normalize_metric(
    name: str,
    value: float,
    sibling_values: list[float] | None = None,
) -> tuple[str, float] | None:
    """(canonical metric, scaled value), or None when the metric is off-list.

    Bounded metrics land on a 0-100 scale: values below 1 are read as
    proportions and multiplied by 100, values in (1, 100] pass through.
    A value of exactly 1 is genuinely ambiguous; the sibling values from
    the same table break the tie by majority (mostly <= 1 means the table
    is proportion-scaled, so 1 means 100%). Unbounded metrics (correlation
    and error metrics) are never rescaled.

    Raises OutOfRange for bounded values outside [0, 100] after scaling.
    """
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError("value must be finite")
    canonical = canonical_metric_name(name)
    if canonical is None:
        return None
    if not APPROVED_METRICS[canonical]:
        return canonical, value
    if value < 0:
        raise OutOfRange(f"{canonical} value {value} below 0")
    if value == 1.0:
        siblings = [v for v in (sibling_values or []) if v == v]
        if siblings and sum(1 for v in siblings if v <= 1.0) * 2 > len(siblings):
            return canonical, 100.0
        return canonical, 1.0
    if value < 1.0:
        return canonical, value * 100.0
    if value > 100.0:
        raise OutOfRange(f"{canonical} value {value} above 100")
    return canonical, value


# ---------------------------------------------------------------------------
# Model canonicalization
# ---------------------------------------------------------------------------

TARGET_MODEL_NAMES = ("GPT-4", "GPT-4o", "Claude3-Opus", "Gemini1.0-Pro")

_COMPOSITION_RE = re.compile(r"[+&]|(?:\bw/\s)|(?:\bwith\b)", re.IGNORECASE)


def canonicalize_model(raw_name: str) -> str | None:
    """Tracked family for a surface model name, or None for non-targets.

    Dated snapshots fold into their family; sibling variants (Sonnet,
    Haiku, 1.5, Turbo, vision, mini, o1, Ultra, Flash...) and pipeline
    compositions ("Deplot + GPT-4") do not count.
    """
    if raw_name == MISSING:
        raise ValueError("model name is the missing sentinel")
    if _COMPOSITION_RE.search(raw_name):
        return None
    folded = _fold(raw_name)
    if not folded:
        return None

    if folded.startswith("gpt4o") and not folded.startswith("gpt4o1"):
        rest = folded[len("gpt4o"):]
        if any(marker in rest for marker in ("mini", "turbo", "preview")):
            return None
        return "GPT-4o"
    if folded.startswith("gpt4") or folded.startswith("chatgpt4"):
        rest = folded.removeprefix("chat").removeprefix("gpt4")
        if rest.startswith("o"):  # gpt4o1 fell through the branch above
            return None
        if any(marker in rest for marker in ("turbo", "vision", "mini", "preview")) or rest == "v":
            return None
        # dated snapshots (gpt-4-0314) and context sizes (gpt-4-32k) still
        # count; short digit tails like gpt-4.5 are other models
        if rest == "" or re.fullmatch(r"\d{4,}", rest) or re.fullmatch(r"\d+k", rest):
            return "GPT-4"
        return None
    if folded.startswith("claude"):
        rest = folded.removeprefix("claude")
        if any(marker in rest for marker in ("sonnet", "haiku", "instant")):
            return None
        if rest.startswith("2") or rest.startswith("35") or rest.startswith("1"):
            return None
        if rest in ("3", "3opus", "opus") or rest.startswith("3opus"):
            return "Claude3-Opus"
        return None
    if folded.startswith("gemini"):
        rest = folded.removeprefix("gemini")
        if any(marker in rest for marker in ("15", "ultra", "flash", "nano", "advanced", "2")):
            return None
        stripped = rest.replace("pro", "")
        if stripped in ("", "10", "1") or re.fullmatch(r"10\d*", stripped):
            return "Gemini1.0-Pro"
        return None
    return None


# ---------------------------------------------------------------------------
# Fine-tuning filter
# ---------------------------------------------------------------------------

_FINETUNE_RE = re.compile(r"fine[\s_-]?tun|finetun|\b(?:ft|sft|lora)\b", re.IGNORECASE)


def is_fine_tuned(record: ExtractionRecord) -> bool:
    return bool(_FINETUNE_RE.search(record.model_name)
                or _FINETUNE_RE.search(record.prompting_method))


def filter_fine_tuned(records: list[ExtractionRecord]) -> list[ExtractionRecord]:
    """Drop records whose model or prompting text carries fine-tune markers."""
    return [r for r in records if not is_fine_tuned(r)]


# ---------------------------------------------------------------------------
# Dataset canonicalization
# ---------------------------------------------------------------------------

_WS_RE = re.compile(r"[\s_-]+")


def _dataset_fold(name: str) -> str:
    return _WS_RE.sub("", name.lower())


class DatasetAliases:
    """Registered abbreviation pairs on top of the character-fold rule.

    The table maps folded alias -> folded canonical key; chains are
    resolved at load so lookups are single-step and canonicalization is a
    fixed point. Version and size suffixes are never merged implicitly --
    only an explicit entry can merge two distinct keys.
    """

    def __init__(self, pairs: dict[str, str] | None = None):
        resolved: dict[str, str] = {}
        raw = {_dataset_fold(k): _dataset_fold(v) for k, v in (pairs or {}).items() if _dataset_fold(k)}
        for alias in raw:
            target = raw[alias]
            seen = {alias}
            while target in raw and target not in seen:
                seen.add(target)
                target = raw[target]
            resolved[alias] = target
        self._map = {a: t for a, t in resolved.items() if a != t}

    def resolve(self, folded_key: str) -> str:
        return self._map.get(folded_key, folded_key)

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetAliases":
        pairs = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                alias, _, canonical = line.partition("\t")
                if canonical:
                    pairs[alias] = canonical
        return cls(pairs)

    @classmethod
    def bundled(cls) -> "DatasetAliases":
        text = resources.files("evalmine.data").joinpath("dataset_aliases.tsv").read_text("utf-8")
        pairs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            alias, _, canonical = line.partition("\t")
            if canonical:
                pairs[alias] = canonical
        return cls(pairs)


def canonicalize_dataset(name: str, aliases: DatasetAliases | None = None) -> str:
    """Stable key for a dataset surface name.

    Lowercase with whitespace, hyphens, and underscores removed; then one
    alias-table hop. Distinct digits or suffix letters keep names apart
    unless a curated alias says otherwise.
    """
    if name == MISSING:
        raise ValueError("dataset name is the missing sentinel")
    key = _dataset_fold(name)
    if aliases is not None:
        key = aliases.resolve(key)
    return key


# ---------------------------------------------------------------------------
# Normalized records and deduplication
# ---------------------------------------------------------------------------

@dataclass
class NormalizedRecord:
    """ExtractionRecord plus canonical keys, a scaled value, and description
    bookkeeping. ``record_id`` is assigned at store time and stays stable."""

    record_id: str
    paper_id: str
    table_index: int
    value: str
    dataset: str
    dataset_citation_tag: str
    subset: str
    model_name: str
    metric: str
    prompting_method: str
    number_of_shots: str
    canonical_model: str
    canonical_dataset: str
    canonical_metric: str
    scaled_value: float
    description_source: str = ""  # internal_knowledge | table_paper | linked_dataset_paper
    flags: list[str] = field(default_factory=list)
    original: dict | None = None
    extra: dict = field(default_factory=dict)

    def shots_int(self) -> int | None:
        if self.number_of_shots == MISSING:
            return None
        try:
            return int(self.number_of_shots)
        except ValueError:
            return None


@dataclass
class RejectedRecord:
    record: ExtractionRecord
    reason: str


def _normalize_shots(raw: str) -> tuple[str, bool]:
    """Canonical shot-count string ('5' not '05'/'5.0'); flag junk."""
    if raw == MISSING:
        return MISSING, True
    try:
        parsed = int(float(raw))
    except ValueError:
        return MISSING, False
    if parsed < 0 or float(raw) != parsed:
        return MISSING, False
    return str(parsed), True


def normalize_records(
    records: list[ExtractionRecord],
    aliases: DatasetAliases | None = None,
    values_already_scaled: bool = False,
    sibling_values: dict[tuple[str, int], list[float]] | None = None,
) -> tuple[list[NormalizedRecord], list[RejectedRecord]]:
    """Whitelist, scale, and canonicalize a batch of extracted records.

    Rejections (off-list metric, non-target model, fine-tune markers,
    unparseable or out-of-range values, missing dataset) are returned
    rather than logged away. ``sibling_values`` feeds the ==1.0 scale
    disambiguation with the other numeric values of each table.
    ``values_already_scaled`` is for importing published data that is on
    the 0-100 scale already.
    """
    aliases = aliases if aliases is not None else DatasetAliases.bundled()
    normalized: list[NormalizedRecord] = []
    rejected: list[RejectedRecord] = []
    counter: dict[tuple[str, int], int] = {}

    for record in records:
        if is_fine_tuned(record):
            rejected.append(RejectedRecord(record, "fine-tuned"))
            continue
        if record.model_name == MISSING:
            rejected.append(RejectedRecord(record, "missing-model"))
            continue
        model = canonicalize_model(record.model_name)
        if model is None:
            rejected.append(RejectedRecord(record, "not-target-model"))
            continue
        if record.dataset == MISSING:
            rejected.append(RejectedRecord(record, "missing-dataset"))
            continue
        if record.metric == MISSING:
            rejected.append(RejectedRecord(record, "missing-metric"))
            continue
        value, multi = clean_numeric_cell(record.value) if record.value != MISSING else (None, False)
        if value is None:
            rejected.append(RejectedRecord(record, "unparseable-value"))
            continue

        flags = list(record.flags)
        if multi:
            flags.append("multi-number-cell")
        if values_already_scaled:
            canonical = canonical_metric_name(record.metric)
            outcome = (canonical, value) if canonical else None
        else:
            siblings = (sibling_values or {}).get((record.paper_id, record.table_index))
            try:
                outcome = normalize_metric(record.metric, value, siblings)
            except OutOfRange as exc:
                rejected.append(RejectedRecord(record, f"out-of-range: {exc}"))
                continue
            if outcome is not None and value == 1.0 and APPROVED_METRICS[outcome[0]]:
                flags.append("scale-ambiguous-at-1")
        if outcome is None:
            rejected.append(RejectedRecord(record, "metric-not-approved"))
            continue
        canonical_metric, scaled = outcome

        shots, shots_ok = _normalize_shots(record.number_of_shots)
        if not shots_ok:
            flags.append("unparseable-shots")

        key = (record.paper_id, record.table_index)
        counter[key] = counter.get(key, 0) + 1
        normalized.append(NormalizedRecord(
            record_id=f"{record.paper_id}:{record.table_index}:{counter[key]}",
            paper_id=record.paper_id,
            table_index=record.table_index,
            value=record.value,
            dataset=record.dataset,
            dataset_citation_tag=record.dataset_citation_tag,
            subset=record.subset,
            model_name=record.model_name,
            metric=record.metric,
            prompting_method=record.prompting_method,
            number_of_shots=shots,
            canonical_model=model,
            canonical_dataset=canonicalize_dataset(record.dataset, aliases),
            canonical_metric=canonical_metric,
            scaled_value=scaled,
            flags=flags,
            original=record.original,
        ))
    return normalized, rejected


def dedup_key(record: NormalizedRecord) -> tuple:
    return (
        record.canonical_dataset,
        record.subset,
        record.number_of_shots,
        record.prompting_method,
        record.canonical_metric,
        record.canonical_model,
        record.paper_id,
    )


@dataclass
class ConflictGroup:
    key: tuple
    records: list[NormalizedRecord]


def dedup(records: list[NormalizedRecord]) -> tuple[list[NormalizedRecord], list[ConflictGroup]]:
    """Collapse exact duplicates; remove groups that disagree on value.

    Two records are duplicates when everything in the grouping key matches;
    if their scaled values also match, one survives. A key whose members
    carry different values is a contradiction we cannot arbitrate, so the
    whole group is dropped and reported instead of silently picking one.
    """
    groups: dict[tuple, list[NormalizedRecord]] = {}
    order: list[tuple] = []
    for record in records:
        key = dedup_key(record)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(record)

    kept: list[NormalizedRecord] = []
    conflicts: list[ConflictGroup] = []
    for key in order:
        members = groups[key]
        values = {m.scaled_value for m in members}
        if len(values) == 1:
            kept.append(members[0])
        else:
            conflicts.append(ConflictGroup(key=key, records=members))
    return kept, conflicts
