"""Pull table environments and analysis-relevant context out of flattened LaTeX.

Nothing here understands LaTeX semantically. Table environments are located
with delimiter scanning, captions with balanced-brace scanning, and the
context text is the body minus comments, bibliography, image includes, and
a short list of boilerplate sections. The raw table LaTeX is passed through
untouched because downstream extraction reads it as-is.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import UnbalancedBraces
from .ingest import PaperSource, find_arxiv_id

TABLE_ENVIRONMENTS = ("table", "table*", "sidewaystable")

# words-to-tokens fudge factor for budget estimates
TOKEN_ESTIMATE_PER_WORD = 1.3
DEFAULT_CONTEXT_TOKEN_BUDGET = 100_000


@dataclass
class TableCandidate:
    paper_id: str
    table_index: int  # 1-based position in document order
    latex: str
    caption: str = ""


@dataclass
class ContextText:
    paper_id: str
    text: str


_COMMENT_LINE_RE = re.compile(r"^\s*%")


def _strip_comments(latex: str) -> str:
    """Drop full comment lines and unescaped trailing % comments."""
    out_lines = []
    for line in latex.split("\n"):
        if _COMMENT_LINE_RE.match(line):
            continue
        cut = None
        pos = 0
        while True:
            pos = line.find("%", pos)
            if pos < 0:
                break
            backslashes = 0
            probe = pos - 1
            while probe >= 0 and line[probe] == "\\":
                backslashes += 1
                probe -= 1
            if backslashes % 2 == 0:
                cut = pos
                break
            pos += 1
        out_lines.append(line if cut is None else line[:cut])
    return "\n".join(out_lines)


def extract_tables(source: PaperSource) -> list[TableCandidate]:
    r"""Capture table/table*/sidewaystable environments in document order.

    Commented-out environments don't count (the scan happens on
    comment-stripped text), and same-name nesting is depth-tracked so a
    stray inner environment can't truncate its parent. A pure function of
    the source body.
    """
    body = _strip_comments(source.latex)
    openers = []
    for env in TABLE_ENVIRONMENTS:
        begin = f"\\begin{{{env}}}"
        start = 0
        while True:
            pos = body.find(begin, start)
            if pos < 0:
                break
            openers.append((pos, env))
            start = pos + 1
    openers.sort()

    candidates: list[TableCandidate] = []
    consumed_until = -1
    for pos, env in openers:
        if pos < consumed_until:
            continue  # inside a previously captured environment
        begin = f"\\begin{{{env}}}"
        end = f"\\end{{{env}}}"
        depth = 0
        cursor = pos
        span_end = None
        while cursor < len(body):
            next_begin = body.find(begin, cursor)
            next_end = body.find(end, cursor)
            if next_end < 0:
                break  # unterminated environment: drop it
            if 0 <= next_begin < next_end:
                depth += 1
                cursor = next_begin + len(begin)
            else:
                depth -= 1
                cursor = next_end + len(end)
                if depth == 0:
                    span_end = cursor
                    break
        if span_end is None:
            continue
        consumed_until = span_end
        latex = body[pos:span_end]
        candidates.append(TableCandidate(
            paper_id=source.arxiv_id,
            table_index=len(candidates) + 1,
            latex=latex,
            caption=extract_caption_text(latex),
        ))
    return candidates


def _balanced_braces(text: str, open_pos: int) -> str:
    """Content of the brace group opening at ``open_pos``."""
    assert text[open_pos] == "{"
    depth = 0
    for pos in range(open_pos, len(text)):
        if text[pos] == "{":
            depth += 1
        elif text[pos] == "}":
            depth -= 1
            if depth == 0:
                return text[open_pos + 1:pos]
    raise UnbalancedBraces(f"no closing brace for group at offset {open_pos}")


_CAPTION_RE = re.compile(r"\\caption\s*(?:\[[^\]]*\])?\s*\{")


def extract_caption_text(table_latex: str) -> str:
    r"""First \caption{...} argument, brace-balanced; empty string if absent."""
    match = _CAPTION_RE.search(table_latex)
    if not match:
        return ""
    return _balanced_braces(table_latex, match.end() - 1)


def extract_caption(candidate: TableCandidate) -> str:
    return extract_caption_text(candidate.latex)


def estimate_tokens(text: str) -> int:
    return int(len(text.split()) * TOKEN_ESTIMATE_PER_WORD)


_DROP_SECTION_RE = re.compile(
    r"\\section\*?\s*\{[^}]*(acknowledg|reference|checklist|bibliograph)[^}]*\}",
    re.IGNORECASE,
)
_NEXT_SECTION_RE = re.compile(r"\\(?:section\*?\s*\{|appendix\b|end\{document\})")
_THEBIB_RE = re.compile(r"\\begin\{thebibliography\}.*?\\end\{thebibliography\}", re.DOTALL)
_BIB_CMD_RE = re.compile(r"^[^\n%]*\\(?:bibliography|bibliographystyle)\{[^}]*\}.*$", re.MULTILINE)
_GRAPHICS_RE = re.compile(r"\\includegraphics\s*(?:\[[^\]]*\])?\s*\{[^}]*\}")


def build_context(source: PaperSource, token_budget: int = DEFAULT_CONTEXT_TOKEN_BUDGET) -> ContextText:
    """Section text plus tables and captions, minus boilerplate, budget-capped.

    Keeps the whole body except comments, bibliography blocks, image
    includes, and sections whose titles mark acknowledgment/reference/
    checklist boilerplate. Over-budget text is truncated from the end at a
    paragraph boundary.
    """
    text = _strip_comments(source.latex)
    text = _THEBIB_RE.sub("", text)
    text = _BIB_CMD_RE.sub("", text)
    text = _GRAPHICS_RE.sub("", text)

    while True:
        match = _DROP_SECTION_RE.search(text)
        if not match:
            break
        tail = _NEXT_SECTION_RE.search(text, match.end())
        stop = tail.start() if tail else len(text)
        text = text[:match.start()] + text[stop:]

    if estimate_tokens(text) > token_budget:
        words = text.split()
        keep_words = max(1, int(token_budget / TOKEN_ESTIMATE_PER_WORD))
        # walk forward to the character offset of the last kept word
        count = 0
        offset = len(text)
        for match in re.finditer(r"\S+", text):
            count += 1
            if count == keep_words:
                offset = match.end()
                break
        clipped = text[:offset]
        boundary = clipped.rfind("\n\n")
        if boundary > 0:
            clipped = clipped[:boundary]
        text = clipped

    return ContextText(paper_id=source.arxiv_id, text=text)


def resolve_citation(tag: str, source: PaperSource) -> str | None:
    """ArXiv id referenced by a citation tag's bibliography entry, else None."""
    if not tag:
        raise ValueError("citation tag must be non-empty")
    entry = source.bibliography.get(tag)
    if entry is None:
        return None
    return find_arxiv_id(entry)
