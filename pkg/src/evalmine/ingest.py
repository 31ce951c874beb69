"""Discover, filter, and flatten arXiv LaTeX sources.

The corpus on disk is a directory of per-paper entries, either
``<arxiv_id>.tar.gz`` archives or plain ``<arxiv_id>/`` directories.
Category metadata is not present in the LaTeX itself, so a sidecar
manifest (one line per paper: ``id<TAB>cat,cat<TAB>title``) supplies it.
"""
from __future__ import annotations

import io
import logging
import re
import tarfile
from dataclasses import dataclass
from pathlib import Path

from .errors import MalformedId, NoMainFile

logger = logging.getLogger(__name__)

ARXIV_ID_RE = re.compile(r"^\d{4}\.\d{4,5}$")
# id-like tokens inside bibliography entries, with optional version suffix
_ARXIV_REF_RE = re.compile(
    r"(?:arxiv[:.\s/]*(?:abs/)?|arxiv\.org/(?:abs|pdf)/)(\d{4}\.\d{4,5})(?:v\d+)?",
    re.IGNORECASE,
)

EntryFiles = dict[str, str]


@dataclass
class PaperSource:
    """One paper's identity, metadata, flattened LaTeX, and bibliography."""

    arxiv_id: str
    categories: frozenset[str]
    published: str  # YYYY-MM, derived from the id prefix
    latex: str
    bibliography: dict[str, str]
    title: str = ""


@dataclass(frozen=True)
class CorpusFilter:
    date_from: str  # YYMM inclusive
    date_to: str    # YYMM inclusive
    categories: frozenset[str]

    def __post_init__(self):
        for stamp in (self.date_from, self.date_to):
            if not re.fullmatch(r"\d{4}", stamp):
                raise ValueError(f"date stamp {stamp!r} must be YYMM")
        if self.date_from > self.date_to:
            raise ValueError("date_from must be <= date_to")
        if not self.categories:
            raise ValueError("categories must be non-empty")

    def admits(self, arxiv_id: str, categories: frozenset[str]) -> str | None:
        """Return None if admissible, else the skip reason."""
        stamp = arxiv_id[:4].replace(".", "")
        if not (self.date_from <= stamp <= self.date_to):
            return "date-out-of-window"
        if not (self.categories & categories):
            return "category-mismatch"
        return None


@dataclass
class Skip:
    entry: str
    reason: str


def validate_arxiv_id(arxiv_id: str) -> None:
    if not ARXIV_ID_RE.fullmatch(arxiv_id):
        raise MalformedId(f"{arxiv_id!r} is not a YYMM.NNNNN arXiv id")


def published_from_id(arxiv_id: str) -> str:
    """YYMM.NNNNN -> 'YYYY-MM' (new-style ids, i.e. 2007 onward)."""
    validate_arxiv_id(arxiv_id)
    year = 2000 + int(arxiv_id[:2])
    month = int(arxiv_id[2:4])
    if not 1 <= month <= 12:
        raise MalformedId(f"{arxiv_id!r} has month {month}")
    return f"{year:04d}-{month:02d}"


def arxiv_id_to_quarter(arxiv_id: str) -> str:
    """YYMM.NNNNN -> 'YYYY-Qn' by calendar quarter of the id prefix."""
    published = published_from_id(arxiv_id)
    year, month = published.split("-")
    quarter = (int(month) - 1) // 3 + 1
    return f"{year}-Q{quarter}"


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_manifest(path: str | Path) -> dict[str, tuple[frozenset[str], str]]:
    """Parse the sidecar metadata file: id -> (categories, title)."""
    manifest: dict[str, tuple[frozenset[str], str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                logger.warning("manifest line without categories: %r", line[:80])
                continue
            arxiv_id = parts[0].strip()
            cats = frozenset(c.strip() for c in parts[1].split(",") if c.strip())
            title = parts[2].strip() if len(parts) > 2 else ""
            manifest[arxiv_id] = (cats, title)
    return manifest


# ---------------------------------------------------------------------------
# Entry reading and flattening
# ---------------------------------------------------------------------------

def _read_dir_entry(path: Path) -> EntryFiles:
    files: EntryFiles = {}
    for child in sorted(path.rglob("*")):
        if child.is_file():
            rel = str(child.relative_to(path))
            files[rel] = child.read_text(encoding="utf-8", errors="replace")
    return files


def _read_tar_entry(path: Path) -> EntryFiles:
    files: EntryFiles = {}
    with tarfile.open(path, "r:*") as tar:
        for member in tar.getmembers():
            if not member.isfile():
                continue
            fh = tar.extractfile(member)
            if fh is None:
                continue
            name = member.name.lstrip("./")
            files[name] = io.TextIOWrapper(fh, encoding="utf-8", errors="replace").read()
    return files


_INPUT_RE = re.compile(r"\\(?:input|include)\{([^}]+)\}")


def choose_main_file(files: EntryFiles) -> str:
    r"""Pick the compilation root: a .tex containing \documentclass, largest wins ties."""
    candidates = [
        name for name, text in files.items()
        if name.endswith(".tex") and "\\documentclass" in text
    ]
    if not candidates:
        raise NoMainFile("no .tex file contains \\documentclass")
    return max(candidates, key=lambda name: (len(files[name]), name))


def flatten_latex(files: EntryFiles) -> str:
    r"""Inline \input/\include of sibling files into the main file, one level deep.

    Missing targets are left untouched; deeper nesting stays as-is (cycles in
    the wild are rare but real, and one level covers the common
    main-plus-table-files layout).
    """
    main = choose_main_file(files)

    def resolve(name: str) -> str | None:
        for candidate in (name, name + ".tex"):
            if candidate in files:
                return candidate
        return None

    def splice(match: re.Match) -> str:
        target = resolve(match.group(1).strip())
        if target is None:
            return match.group(0)
        return files[target]

    return _INPUT_RE.sub(splice, files[main])


# ---------------------------------------------------------------------------
# Bibliography
# ---------------------------------------------------------------------------

_BIBITEM_RE = re.compile(
    r"\\bibitem(?:\[[^\]]*\])?\{([^}]+)\}(.*?)(?=\\bibitem|\\end\{thebibliography\}|\Z)",
    re.DOTALL,
)
_BIBTEX_HEAD_RE = re.compile(r"@\w+\s*\{\s*([^,\s]+)\s*,")


def _parse_bibtex(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for match in _BIBTEX_HEAD_RE.finditer(text):
        key = match.group(1)
        # scan forward to the balancing brace of the entry
        depth = 0
        start = text.index("{", match.start())
        for pos in range(start, len(text)):
            if text[pos] == "{":
                depth += 1
            elif text[pos] == "}":
                depth -= 1
                if depth == 0:
                    entries[key] = text[match.start():pos + 1]
                    break
        else:
            entries[key] = text[match.start():]
    return entries


def extract_bibliography(latex: str, extra_files: EntryFiles | None = None) -> dict[str, str]:
    r"""Citation tag -> entry text, from \bibitem blocks plus sibling .bbl/.bib files."""
    bib: dict[str, str] = {}
    for key, body in _BIBITEM_RE.findall(latex):
        bib.setdefault(key, re.sub(r"\s+", " ", body).strip())
    for name, text in sorted((extra_files or {}).items()):
        if name.endswith(".bbl"):
            for key, body in _BIBITEM_RE.findall(text):
                bib.setdefault(key, re.sub(r"\s+", " ", body).strip())
        elif name.endswith(".bib"):
            for key, body in _parse_bibtex(text).items():
                bib.setdefault(key, re.sub(r"\s+", " ", body).strip())
    return bib


def find_arxiv_id(entry_text: str) -> str | None:
    """First arXiv identifier mentioned in a bibliography entry, version-stripped."""
    match = _ARXIV_REF_RE.search(entry_text)
    return match.group(1) if match else None


_TITLE_RE = re.compile(r"\\title\s*(\[[^\]]*\])?\s*\{")


def _extract_title(latex: str) -> str:
    match = _TITLE_RE.search(latex)
    if not match:
        return ""
    depth = 0
    start = match.end() - 1
    for pos in range(start, len(latex)):
        if latex[pos] == "{":
            depth += 1
        elif latex[pos] == "}":
            depth -= 1
            if depth == 0:
                body = latex[start + 1:pos]
                body = re.sub(r"\\\\|\\thanks\{[^}]*\}", " ", body)
                body = re.sub(r"[{}]", "", body)
                return re.sub(r"\s+", " ", body).strip()
    return ""


# ---------------------------------------------------------------------------
# Corpus scan
# ---------------------------------------------------------------------------

def scan_corpus(
    root: str | Path,
    corpus_filter: CorpusFilter,
    manifest: dict[str, tuple[frozenset[str], str]],
) -> tuple[list[PaperSource], list[Skip]]:
    """One PaperSource per admissible entry under ``root``, plus a skip report.

    Every entry lands in exactly one of the two lists, so
    ``len(sources) + len(skips)`` equals the entry count. Output is sorted
    by arxiv id for determinism.
    """
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"corpus root {root} is not a readable directory")

    sources: list[PaperSource] = []
    skips: list[Skip] = []
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        name = entry.name
        if entry.is_dir():
            arxiv_id = name
            reader = _read_dir_entry
        elif name.endswith(".tar.gz"):
            arxiv_id = name[:-len(".tar.gz")]
            reader = _read_tar_entry
        else:
            skips.append(Skip(name, "not-a-paper-entry"))
            continue

        if not ARXIV_ID_RE.fullmatch(arxiv_id):
            skips.append(Skip(name, "malformed-id"))
            continue
        meta = manifest.get(arxiv_id)
        if meta is None:
            skips.append(Skip(arxiv_id, "no-metadata"))
            continue
        categories, title = meta
        reason = corpus_filter.admits(arxiv_id, categories)
        if reason:
            skips.append(Skip(arxiv_id, reason))
            continue

        try:
            files = reader(entry)
        except (tarfile.TarError, EOFError, OSError) as exc:
            logger.warning("corrupt entry %s: %s", name, exc)
            skips.append(Skip(arxiv_id, "corrupt-archive"))
            continue
        if not any(f.endswith(".tex") for f in files):
            skips.append(Skip(arxiv_id, "no-latex"))
            continue
        try:
            latex = flatten_latex(files)
        except NoMainFile:
            skips.append(Skip(arxiv_id, "no-main-file"))
            continue

        sources.append(PaperSource(
            arxiv_id=arxiv_id,
            categories=categories,
            published=published_from_id(arxiv_id),
            latex=latex,
            bibliography=extract_bibliography(latex, files),
            title=_extract_title(latex) or title,
        ))

    sources.sort(key=lambda s: s.arxiv_id)
    skips.sort(key=lambda s: s.entry)
    return sources, skips
