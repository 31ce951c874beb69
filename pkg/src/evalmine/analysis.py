"""Matched-pair construction and the statistics run on top of it.

A delta observation pairs two records from the same paper and table that
agree on every grouping field except the compared condition: prompting
style (CoT vs direct), shot count (few vs zero, more vs fewer), or both
jointly. Summaries are interpolated quantiles; significance is a seeded
one-sided bootstrap on the mean with a Bonferroni-corrected threshold.

The single manual input is the prompt label map: a human decides which
prompting-method strings mean CoT, which mean direct answering, and which
are CoT variants to exclude. Everything downstream is mechanical.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dblp import DblpClient, PEER_REVIEWED_TYPES, edit_similarity, normalize_title
from .descriptions import DatasetDescription
from .errors import TooFewObservations, TransportError
from .gateway import LlmGateway, PromptTemplate
from .normalize import NormalizedRecord

logger = logging.getLogger(__name__)

LABEL_COT = "cot"
LABEL_DIRECT = "direct"
LABEL_COT_VARIANT = "cot_variant"
LABEL_OTHER = "other"
_VALID_LABELS = {LABEL_COT, LABEL_DIRECT, LABEL_COT_VARIANT, LABEL_OTHER}

COT_VS_DIRECT = "cot_vs_direct"
FEW_VS_ZERO = "few_vs_zero"
MORE_VS_FEWER = "more_vs_fewer"
FEWCOT_VS_ZEROCOT = "fewcot_vs_zerocot"
COT_VS_DIRECT_MATCHED = "cot_vs_direct_at_matched_shots"

DEFAULT_RESAMPLES = 100_000
DEFAULT_ALPHA = 0.05
DEFAULT_CORRECTION_M = 22  # 11 categories x 2 result sets
_BOOTSTRAP_CHUNK_CELLS = 2_000_000

NEGATIVE_TRAIT_TAXONOMY = (
    "Expert Knowledge",
    "Faithfulness",
    "Complex Reasoning",
    "Information Synthesis",
    "Cognitive Tasks",
    "Affective Analysis",
    "Structured Prediction",
    "Other",
)


# ---------------------------------------------------------------------------
# Prompt label map
# ---------------------------------------------------------------------------

class PromptLabelMap:
    """prompting_method string -> cot | direct | cot_variant | other.

    Lookup tries the exact string then a case-folded match; anything
    unmapped defaults to ``other`` and shows up in the coverage report.
    """

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries: dict[str, str] = {}
        self._folded: dict[str, str] = {}
        for key, value in (entries or {}).items():
            if value not in _VALID_LABELS:
                raise ValueError(f"label {value!r} for {key!r} not one of {sorted(_VALID_LABELS)}")
            self.entries[key] = value
            self._folded.setdefault(key.strip().casefold(), value)

    def label(self, prompting_method: str) -> str:
        if prompting_method in self.entries:
            return self.entries[prompting_method]
        return self._folded.get(prompting_method.strip().casefold(), LABEL_OTHER)

    def coverage(self, records: list[NormalizedRecord]) -> tuple[set[str], set[str]]:
        """(mapped, unmapped) prompting strings appearing in the records."""
        seen = {r.prompting_method for r in records}
        unmapped = {s for s in seen
                    if s not in self.entries and s.strip().casefold() not in self._folded}
        return seen - unmapped, unmapped

    @classmethod
    def load(cls, path: str | Path) -> "PromptLabelMap":
        entries = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                text, _, label = line.rpartition("\t")
                entries[text] = label.strip()
        return cls(entries)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self.entries):
                fh.write(f"{key}\t{self.entries[key]}\n")


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaObservation:
    paper_id: str
    table_index: int
    model: str
    dataset: str
    subset: str
    metric: str
    shots_a: str
    shots_b: str
    value_a: float
    value_b: float
    comparison: str
    categories: frozenset[str] = field(default_factory=frozenset, compare=False)

    @property
    def delta(self) -> float:
        return self.value_a - self.value_b

    @property
    def matched_shots_tag(self) -> str:
        """'zero-shot' or 'few-shot' for the matched-shots comparison."""
        return "zero-shot" if self.shots_a == "0" else "few-shot"


def _pair(a: NormalizedRecord, b: NormalizedRecord, comparison: str) -> DeltaObservation:
    return DeltaObservation(
        paper_id=a.paper_id,
        table_index=a.table_index,
        model=a.canonical_model,
        dataset=a.canonical_dataset,
        subset=a.subset,
        metric=a.canonical_metric,
        shots_a=a.number_of_shots,
        shots_b=b.number_of_shots,
        value_a=a.scaled_value,
        value_b=b.scaled_value,
        comparison=comparison,
    )


def _base_key(record: NormalizedRecord) -> tuple:
    return (record.paper_id, record.table_index, record.canonical_model,
            record.canonical_dataset, record.subset, record.canonical_metric)


def match_cot_pairs(
    records: list[NormalizedRecord], labels: PromptLabelMap
) -> list[DeltaObservation]:
    """CoT x direct pairs within matched conditions; delta = cot - direct.

    Grouping requires equal (paper, table, model, dataset, subset, metric,
    shots). The shot field is a grouping field here, not the compared one,
    so two records that both left it unreported still share their table's
    default and may pair. CoT variants never participate.
    """
    groups: dict[tuple, tuple[list, list]] = {}
    for record in records:
        label = labels.label(record.prompting_method)
        if label not in (LABEL_COT, LABEL_DIRECT):
            continue
        key = _base_key(record) + (record.number_of_shots,)
        cots, directs = groups.setdefault(key, ([], []))
        (cots if label == LABEL_COT else directs).append(record)

    observations = []
    for key in sorted(groups):
        cots, directs = groups[key]
        for cot in cots:
            for direct in directs:
                observations.append(_pair(cot, direct, COT_VS_DIRECT))
    return observations


def match_shot_pairs(
    records: list[NormalizedRecord], mode: str
) -> list[DeltaObservation]:
    """Shot-count pairs with prompting held fixed.

    ``few_vs_zero`` pairs every shots>0 record against every shots==0
    record (delta = few - zero); ``more_vs_fewer`` pairs every m>k>0.
    Records without a parseable shot count cannot be placed on either side.
    """
    if mode not in (FEW_VS_ZERO, MORE_VS_FEWER):
        raise ValueError(f"unknown mode {mode!r}")
    groups: dict[tuple, list[tuple[int, NormalizedRecord]]] = {}
    for record in records:
        shots = record.shots_int()
        if shots is None:
            continue
        key = _base_key(record) + (record.prompting_method,)
        groups.setdefault(key, []).append((shots, record))

    observations = []
    for key in sorted(groups):
        members = groups[key]
        for shots_a, rec_a in members:
            for shots_b, rec_b in members:
                if mode == FEW_VS_ZERO:
                    if shots_a > 0 and shots_b == 0:
                        observations.append(_pair(rec_a, rec_b, FEW_VS_ZERO))
                else:
                    if shots_a > shots_b > 0:
                        observations.append(_pair(rec_a, rec_b, MORE_VS_FEWER))
    return observations


def match_joint(
    records: list[NormalizedRecord], labels: PromptLabelMap
) -> list[DeltaObservation]:
    """Both joint comparisons of prompting style and demonstrations.

    ``fewcot_vs_zerocot`` holds CoT fixed (by label, not surface spelling,
    since CoT spellings often embed the shot count) and pairs shots>0
    against shots==0. ``cot_vs_direct_at_matched_shots`` pairs CoT against
    direct inside each concrete shots value; the zero-/few-shot tag comes
    off the shared shot count.
    """
    cot_groups: dict[tuple, list[tuple[int, NormalizedRecord]]] = {}
    matched_groups: dict[tuple, tuple[list, list]] = {}
    for record in records:
        label = labels.label(record.prompting_method)
        shots = record.shots_int()
        if shots is None or label not in (LABEL_COT, LABEL_DIRECT):
            continue
        if label == LABEL_COT:
            cot_groups.setdefault(_base_key(record), []).append((shots, record))
        key = _base_key(record) + (shots,)
        cots, directs = matched_groups.setdefault(key, ([], []))
        (cots if label == LABEL_COT else directs).append(record)

    observations = []
    for key in sorted(cot_groups):
        members = cot_groups[key]
        for shots_a, rec_a in members:
            for shots_b, rec_b in members:
                if shots_a > 0 and shots_b == 0:
                    observations.append(_pair(rec_a, rec_b, FEWCOT_VS_ZEROCOT))
    for key in sorted(matched_groups):
        cots, directs = matched_groups[key]
        for cot in cots:
            for direct in directs:
                observations.append(_pair(cot, direct, COT_VS_DIRECT_MATCHED))
    return observations


def labels_by_dataset_subset(
    records: list[NormalizedRecord], assignments: dict[str, "CategoryAssignment"]
) -> dict[tuple[str, str], frozenset[str]]:
    """Category labels keyed by (canonical dataset, subset)."""
    out: dict[tuple[str, str], frozenset[str]] = {}
    for record in records:
        assignment = assignments.get(record.record_id)
        if assignment is not None:
            out[(record.canonical_dataset, record.subset)] = assignment.labels
    return out


def attach_categories(
    observations: list[DeltaObservation],
    labels: dict[tuple[str, str], frozenset[str]],
) -> list[DeltaObservation]:
    return [
        replace(obs, categories=labels.get((obs.dataset, obs.subset), frozenset()))
        for obs in observations
    ]


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass
class SummaryStats:
    median: float
    q1: float
    q3: float
    mean: float
    n: int


def _stats(values: list[float]) -> SummaryStats:
    arr = np.asarray(values, dtype=float)
    q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return SummaryStats(median=float(median), q1=float(q1), q3=float(q3),
                        mean=float(arr.mean()), n=len(values))


def summarize(
    observations: list[DeltaObservation],
    grouping: str = "overall",
) -> dict[str, SummaryStats]:
    """Median/Q1/Q3/mean of deltas, grouped three ways.

    ``per_paper_then_category`` averages deltas within each paper first and
    summarizes those paper means, matching the per-paper aggregation used
    for plotting; groups that end up empty are skipped with a note.
    """
    if grouping == "overall":
        if not observations:
            logger.info("summarize: no observations, skipping overall group")
            return {}
        return {"overall": _stats([o.delta for o in observations])}

    if grouping == "per_category":
        by_category: dict[str, list[float]] = {}
        for obs in observations:
            for label in obs.categories:
                by_category.setdefault(label, []).append(obs.delta)
        return {label: _stats(values) for label, values in sorted(by_category.items())}

    if grouping == "per_paper_then_category":
        by_pair: dict[tuple[str, str], list[float]] = {}
        for obs in observations:
            for label in obs.categories:
                by_pair.setdefault((label, obs.paper_id), []).append(obs.delta)
        by_category_means: dict[str, list[float]] = {}
        for (label, _), values in sorted(by_pair.items()):
            by_category_means.setdefault(label, []).append(float(np.mean(values)))
        return {label: _stats(means) for label, means in sorted(by_category_means.items())}

    raise ValueError(f"unknown grouping {grouping!r}")


def per_paper_means(
    observations: list[DeltaObservation],
) -> dict[tuple[str, str], tuple[float, int]]:
    """(category, paper) -> (mean delta, n); the blue-dot layer of the plots."""
    by_pair: dict[tuple[str, str], list[float]] = {}
    for obs in observations:
        for label in obs.categories:
            by_pair.setdefault((label, obs.paper_id), []).append(obs.delta)
    return {key: (float(np.mean(vals)), len(vals)) for key, vals in sorted(by_pair.items())}


# ---------------------------------------------------------------------------
# Bootstrap significance
# ---------------------------------------------------------------------------

def bootstrap_test(
    deltas: list[float], resamples: int = DEFAULT_RESAMPLES, seed: int = 0
) -> float:
    """One-sided bootstrap p for mean improvement > 0.

    Resamples of size n with replacement from a seeded generator; p is the
    fraction of resample means <= 0. Index-based resampling keeps the draw
    sequence independent of the values, so a fixed seed gives exact
    determinism and exact monotonicity under positive shifts.
    """
    values = np.asarray(deltas, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise TooFewObservations(f"need at least 2 observations, got {n}")
    if resamples < 1:
        raise ValueError("resamples must be positive")
    rng = np.random.default_rng(seed)
    chunk_rows = max(1, _BOOTSTRAP_CHUNK_CELLS // n)
    le_zero = 0
    done = 0
    while done < resamples:
        rows = min(chunk_rows, resamples - done)
        idx = rng.integers(0, n, size=(rows, n))
        means = values[idx].mean(axis=1)
        le_zero += int(np.count_nonzero(means <= 0.0))
        done += rows
    return le_zero / resamples


def category_seed(seed: int, category: str) -> list[int]:
    """Independent substream key for one category's bootstrap."""
    digest = hashlib.sha256(category.encode("utf-8")).digest()
    return [seed, int.from_bytes(digest[:8], "big")]


@dataclass
class StatTestResult:
    category: str
    n: int
    mean_delta: float
    p_value: float
    threshold: float = float("nan")
    significant: bool = False


def run_category_tests(
    observations: list[DeltaObservation],
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    taxonomy: tuple[str, ...] | None = None,
) -> list[StatTestResult]:
    """Per-category bootstrap over observation deltas (not paper means).

    Categories come from the attached labels; ``taxonomy`` fixes the output
    order and reports empty categories as n=0 rows. Substream seeds derive
    from (seed, category) so results don't depend on iteration order.
    """
    by_category: dict[str, list[float]] = {}
    for obs in observations:
        for label in obs.categories:
            by_category.setdefault(label, []).append(obs.delta)

    order = list(taxonomy) if taxonomy else sorted(by_category)
    results = []
    for category in order:
        deltas = by_category.get(category, [])
        if len(deltas) < 2:
            results.append(StatTestResult(category=category, n=len(deltas),
                                          mean_delta=float("nan"), p_value=float("nan")))
            continue
        p = bootstrap_test(deltas, resamples=resamples,
                           seed=category_seed(seed, category))
        results.append(StatTestResult(category=category, n=len(deltas),
                                      mean_delta=float(np.mean(deltas)), p_value=p))
    return results


def apply_correction(
    results: list[StatTestResult],
    alpha: float = DEFAULT_ALPHA,
    m: int = DEFAULT_CORRECTION_M,
) -> list[StatTestResult]:
    """Bonferroni: significant iff p < alpha/m. Flags recompute from the
    stored p and threshold."""
    if m < 1:
        raise ValueError("m must be >= 1")
    threshold = alpha / m
    return [
        replace(r, threshold=threshold,
                significant=bool(r.p_value == r.p_value and r.p_value < threshold))
        for r in results
    ]


# ---------------------------------------------------------------------------
# Venue filtering
# ---------------------------------------------------------------------------

@dataclass
class VenueMatch:
    paper_id: str
    title: str
    status: str  # matched | no-hit | informal-only | ambiguous | below-threshold | error
    matched_title: str = ""
    venue: str = ""
    hit_type: str = ""


def venue_filter(
    papers: dict[str, str],
    client: DblpClient,
    threshold: float = 0.9,
) -> tuple[set[str], list[VenueMatch]]:
    """Peer-reviewed subset of {paper_id: title} per DBLP metadata.

    A paper counts as peer-reviewed when a journal/conference hit matches
    its title at >= ``threshold`` normalized edit similarity. Passing hits
    that disagree with each other are ambiguous and excluded; query errors
    mark the paper unknown and excluded. Conservative by construction.
    """
    included: set[str] = set()
    report: list[VenueMatch] = []
    for paper_id in sorted(papers):
        title = papers[paper_id]
        wanted = normalize_title(title)
        try:
            hits = client.search(title)
        except TransportError as exc:
            logger.warning("DBLP query failed for %s: %s", paper_id, exc)
            report.append(VenueMatch(paper_id, title, "error"))
            continue
        if not hits:
            report.append(VenueMatch(paper_id, title, "no-hit"))
            continue
        passing = [
            hit for hit in hits
            if hit.type in PEER_REVIEWED_TYPES
            and edit_similarity(wanted, normalize_title(hit.title)) >= threshold
        ]
        if not passing:
            peer_any = any(hit.type in PEER_REVIEWED_TYPES for hit in hits)
            report.append(VenueMatch(
                paper_id, title, "below-threshold" if peer_any else "informal-only"))
            continue
        distinct = {normalize_title(hit.title) for hit in passing}
        if len(distinct) > 1:
            report.append(VenueMatch(paper_id, title, "ambiguous",
                                     matched_title=passing[0].title))
            continue
        best = passing[0]
        included.add(paper_id)
        report.append(VenueMatch(paper_id, title, "matched",
                                 matched_title=best.title, venue=best.venue,
                                 hit_type=best.type))
    return included, report


# ---------------------------------------------------------------------------
# Negative cases
# ---------------------------------------------------------------------------

@dataclass
class NegativeCase:
    observation: DeltaObservation
    description_text: str


def export_negative_cases(
    observations: list[DeltaObservation],
    descriptions: dict[tuple[str, str], DatasetDescription],
) -> dict[str, list[NegativeCase]]:
    """Observations with delta < 0, joined to their dataset descriptions
    and grouped by comparison type."""
    grouped: dict[str, list[NegativeCase]] = {}
    for obs in observations:
        if obs.delta >= 0:
            continue
        description = descriptions.get((obs.dataset, obs.subset))
        text = description.text if description is not None and description.valid else ""
        grouped.setdefault(obs.comparison, []).append(NegativeCase(obs, text))
    return {key: grouped[key] for key in sorted(grouped)}


_TRAITS_TEMPLATE = PromptTemplate.load("negative_traits")


def label_negative_traits(
    cases: dict[str, list[NegativeCase]],
    taxonomy: tuple[str, ...],
    gateway: LlmGateway,
) -> dict[str, dict[str, float]]:
    """Single-label trait classification of each negative case's description;
    returns each trait's share per comparison."""
    if not any(cases.values()):
        raise ValueError("no negative cases to label")
    by_fold = {label.casefold(): label for label in taxonomy}
    fallback = "Other" if "Other" in taxonomy else taxonomy[-1]
    ratios: dict[str, dict[str, float]] = {}
    taxonomy_block = "\n".join(f"- {label}" for label in taxonomy)
    for comparison in sorted(cases):
        counts: dict[str, int] = {}
        for case in cases[comparison]:
            response = gateway.complete(_TRAITS_TEMPLATE.render(
                comparison=comparison.replace("_", " "),
                taxonomy=taxonomy_block,
                dataset=case.observation.dataset,
                subset=case.observation.subset,
                description=case.description_text,
            ))
            label = by_fold.get(response.strip().strip(".").casefold(), fallback)
            counts[label] = counts.get(label, 0) + 1
        total = sum(counts.values())
        ratios[comparison] = {label: counts[label] / total for label in sorted(counts)}
    return ratios
