"""Two-stage table filtering: keyword prefilter, then LLM leaderboard check.

The prefilter is a lowercase substring scan over the whole environment
(caption included), cheap enough to run on every table. Only survivors
spend an LLM call; a verdict that can't be read as true/false keeps the
candidate flagged undetermined rather than losing a possible hit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import UnparseableVerdict
from .gateway import LlmGateway, PromptTemplate
from .latex import TableCandidate

logger = logging.getLogger(__name__)

DEFAULT_KEYWORDS = frozenset({"gpt", "claude", "gemini"})

_LEADERBOARD_TEMPLATE = PromptTemplate.load("leaderboard")


@dataclass
class FilterVerdict:
    paper_id: str
    table_index: int
    keyword_pass: bool
    leaderboard: bool | None  # None = undetermined
    reason: str = ""

    @property
    def keep(self) -> bool:
        """Candidate proceeds to extraction (fail-open on undetermined)."""
        return self.keyword_pass and self.leaderboard is not False


def keyword_prefilter(candidate: TableCandidate, keywords: frozenset[str] = DEFAULT_KEYWORDS) -> bool:
    """True iff any keyword appears, case-folded, anywhere in the table LaTeX."""
    if not keywords:
        raise ValueError("keyword set must be non-empty")
    haystack = candidate.latex.lower()
    return any(keyword in haystack for keyword in keywords)


def classify_leaderboard(candidate: TableCandidate, gateway: LlmGateway) -> bool:
    """Ask the filter model whether the table is a leaderboard table."""
    prompt = _LEADERBOARD_TEMPLATE.render(table_latex=candidate.latex)
    response = gateway.complete(prompt).strip().casefold()
    if response == "true":
        return True
    if response == "false":
        return False
    raise UnparseableVerdict(f"unexpected classifier response: {response[:80]!r}")


def filter_candidates(
    candidates: list[TableCandidate],
    gateway: LlmGateway,
    keywords: frozenset[str] = DEFAULT_KEYWORDS,
) -> list[FilterVerdict]:
    """Verdicts for each candidate in order; the classifier only runs on
    keyword survivors."""
    verdicts = []
    for candidate in candidates:
        if not keyword_prefilter(candidate, keywords):
            verdicts.append(FilterVerdict(
                candidate.paper_id, candidate.table_index,
                keyword_pass=False, leaderboard=None, reason="keyword-miss"))
            continue
        try:
            is_leaderboard = classify_leaderboard(candidate, gateway)
        except UnparseableVerdict as exc:
            logger.warning("%s table %d: %s", candidate.paper_id, candidate.table_index, exc)
            verdicts.append(FilterVerdict(
                candidate.paper_id, candidate.table_index,
                keyword_pass=True, leaderboard=None, reason="unparseable-verdict"))
            continue
        verdicts.append(FilterVerdict(
            candidate.paper_id, candidate.table_index,
            keyword_pass=True, leaderboard=is_leaderboard,
            reason="" if is_leaderboard else "not-leaderboard"))
    return verdicts
