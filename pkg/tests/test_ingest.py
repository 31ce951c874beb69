import tarfile

import pytest

from evalmine.errors import MalformedId, NoMainFile
from evalmine.ingest import (
    CorpusFilter,
    arxiv_id_to_quarter,
    extract_bibliography,
    find_arxiv_id,
    flatten_latex,
    load_manifest,
    scan_corpus,
)

MAIN_TEX = r"""\documentclass{article}
\title{A Study of Things}
\begin{document}
Body text.
\end{document}
"""


def write_paper_dir(root, arxiv_id, files):
    paper_dir = root / arxiv_id
    paper_dir.mkdir()
    for name, text in files.items():
        target = paper_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return paper_dir


def write_paper_tar(root, arxiv_id, files):
    paper_dir = root / ("_stage_" + arxiv_id)
    paper_dir.mkdir()
    for name, text in files.items():
        (paper_dir / name).write_text(text, encoding="utf-8")
    archive = root / f"{arxiv_id}.tar.gz"
    with tarfile.open(archive, "w:gz") as tar:
        for name in files:
            tar.add(paper_dir / name, arcname=name)
    for name in files:
        (paper_dir / name).unlink()
    paper_dir.rmdir()
    return archive


def write_manifest(root, entries):
    path = root / "manifest.tsv"
    lines = [f"{aid}\t{','.join(cats)}\t{title}" for aid, cats, title in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


CATS = frozenset({"cs.CL", "cs.AI", "cs.LG", "cs.CV"})


def default_filter():
    return CorpusFilter(date_from="2301", date_to="2412", categories=CATS)


def test_all_papers_within_window(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    ids = ["2301.00001", "2306.11111", "2412.09999"]
    for aid in ids:
        write_paper_dir(corpus, aid, {"main.tex": MAIN_TEX})
    manifest = load_manifest(write_manifest(tmp_path, [(a, ["cs.CL"], "T") for a in ids]))
    sources, skips = scan_corpus(corpus, default_filter(), manifest)
    assert [s.arxiv_id for s in sources] == ids
    assert skips == []


def test_date_out_of_window_skipped(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    write_paper_dir(corpus, "2212.00001", {"main.tex": MAIN_TEX})
    manifest = load_manifest(write_manifest(tmp_path, [("2212.00001", ["cs.CL"], "T")]))
    sources, skips = scan_corpus(corpus, default_filter(), manifest)
    assert sources == []
    assert len(skips) == 1 and skips[0].reason == "date-out-of-window"


def test_category_mismatch_skipped(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    write_paper_dir(corpus, "2305.00001", {"main.tex": MAIN_TEX})
    manifest = load_manifest(write_manifest(tmp_path, [("2305.00001", ["q-bio.NC"], "T")]))
    sources, skips = scan_corpus(corpus, default_filter(), manifest)
    assert sources == []
    assert skips[0].reason == "category-mismatch"


def test_missing_metadata_skipped(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    write_paper_dir(corpus, "2305.00002", {"main.tex": MAIN_TEX})
    manifest = load_manifest(write_manifest(tmp_path, [("9999.00000", ["cs.CL"], "T")]))
    sources, skips = scan_corpus(corpus, default_filter(), manifest)
    assert skips[0].reason == "no-metadata"


def test_archive_without_tex_reported_not_fatal(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    ids = []
    for i in range(1, 5):
        aid = f"230{i}.0000{i}"
        write_paper_tar(corpus, aid, {"main.tex": MAIN_TEX})
        ids.append(aid)
    write_paper_tar(corpus, "2305.00005", {"readme.txt": "no latex here"})
    manifest = load_manifest(write_manifest(
        tmp_path, [(a, ["cs.CL"], "T") for a in ids + ["2305.00005"]]))
    sources, skips = scan_corpus(corpus, default_filter(), manifest)
    assert len(sources) == 4
    assert len(skips) == 1 and skips[0].reason == "no-latex"


def test_counts_partition_entries(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    write_paper_dir(corpus, "2301.00001", {"main.tex": MAIN_TEX})
    write_paper_dir(corpus, "2212.00001", {"main.tex": MAIN_TEX})
    write_paper_dir(corpus, "2303.00003", {"notes.txt": "nothing"})
    manifest = load_manifest(write_manifest(tmp_path, [
        ("2301.00001", ["cs.CL"], "A"), ("2212.00001", ["cs.CL"], "B"),
        ("2303.00003", ["cs.CL"], "C")]))
    sources, skips = scan_corpus(corpus, default_filter(), manifest)
    entries = len(list(corpus.iterdir()))
    assert len(sources) + len(skips) == entries
    # every returned source re-passes the filter
    for source in sources:
        assert default_filter().admits(source.arxiv_id, source.categories) is None


def test_scan_is_order_stable(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for aid in ["2309.00009", "2301.00001", "2305.00005"]:
        write_paper_dir(corpus, aid, {"main.tex": MAIN_TEX})
    manifest = load_manifest(write_manifest(
        tmp_path, [(a, ["cs.LG"], "T") for a in ["2309.00009", "2301.00001", "2305.00005"]]))
    sources, _ = scan_corpus(corpus, default_filter(), manifest)
    assert [s.arxiv_id for s in sources] == ["2301.00001", "2305.00005", "2309.00009"]


# -- flatten ---------------------------------------------------------------

def test_flatten_single_file_identity():
    files = {"main.tex": MAIN_TEX}
    assert flatten_latex(files) == MAIN_TEX


def test_flatten_inlines_input_at_site():
    main = "\\documentclass{article}\nbefore\n\\input{tables}\nafter\n"
    files = {"main.tex": main, "tables.tex": "TABLE CONTENT"}
    flat = flatten_latex(files)
    assert flat == "\\documentclass{article}\nbefore\nTABLE CONTENT\nafter\n"


def test_flatten_missing_include_left_as_is():
    main = "\\documentclass{article}\n\\input{ghost}\n"
    assert "\\input{ghost}" in flatten_latex({"main.tex": main})


def test_flatten_no_main_file():
    with pytest.raises(NoMainFile):
        flatten_latex({"a.tex": "plain", "b.tex": "also plain"})


def test_flatten_tie_breaks_by_size():
    small = "\\documentclass{article} x"
    large = "\\documentclass{article} " + "y" * 100
    flat = flatten_latex({"a.tex": small, "b.tex": large})
    assert flat == large


# -- quarters ---------------------------------------------------------------

@pytest.mark.parametrize("arxiv_id,expected", [
    ("2301.08721", "2023-Q1"),
    ("2408.02718", "2024-Q3"),
    ("2412.00001", "2024-Q4"),
    ("2304.00001", "2023-Q2"),
])
def test_quarter_bucketing(arxiv_id, expected):
    assert arxiv_id_to_quarter(arxiv_id) == expected


def test_malformed_id_rejected():
    with pytest.raises(MalformedId):
        arxiv_id_to_quarter("abc.12345")
    with pytest.raises(MalformedId):
        arxiv_id_to_quarter("2313.00001")  # month 13


# -- bibliography -----------------------------------------------------------

def test_bibitem_extracted():
    latex = (
        "\\begin{thebibliography}{9}\n"
        "\\bibitem{patel2021nlp} A. Patel et al. Are NLP models really solving math? 2021.\n"
        "\\end{thebibliography}\n")
    bib = extract_bibliography(latex)
    assert "patel2021nlp" in bib
    assert "Patel" in bib["patel2021nlp"]


def test_no_bibliography_gives_empty_map():
    assert extract_bibliography("no citations here") == {}


def test_bib_file_entries_counted():
    bib_text = "\n".join(
        f"@article{{key{i},\n  title={{Title {i}}},\n  year={{2020}}\n}}" for i in range(12))
    bib = extract_bibliography("", extra_files={"refs.bib": bib_text})
    assert len(bib) == 12
    assert all(f"key{i}" in bib for i in range(12))


def test_find_arxiv_id_forms():
    assert find_arxiv_id("arXiv:2103.07191") == "2103.07191"
    assert find_arxiv_id("see https://arxiv.org/abs/1809.09600v2") == "1809.09600"
    assert find_arxiv_id("Journal of Nothing, 2020") is None
