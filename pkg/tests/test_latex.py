import pytest

from evalmine.errors import UnbalancedBraces
from evalmine.ingest import PaperSource
from evalmine.latex import (
    TableCandidate,
    build_context,
    extract_caption,
    extract_caption_text,
    extract_tables,
    resolve_citation,
)


def paper(latex, arxiv_id="2301.00001", bibliography=None):
    return PaperSource(
        arxiv_id=arxiv_id, categories=frozenset({"cs.CL"}), published="2023-01",
        latex=latex, bibliography=bibliography or {}, title="T")


def table_env(body, caption="Results", env="table"):
    return f"\\begin{{{env}}}\n\\caption{{{caption}}}\n{body}\n\\end{{{env}}}"


def test_two_tables_in_document_order():
    latex = "intro\n" + table_env("A", "First") + "\nmiddle\n" + table_env("B", "Second")
    candidates = extract_tables(paper(latex))
    assert [c.table_index for c in candidates] == [1, 2]
    assert candidates[0].caption == "First"
    assert candidates[1].caption == "Second"


def test_table_star_captured():
    latex = table_env("wide body", "Wide", env="table*")
    candidates = extract_tables(paper(latex))
    assert len(candidates) == 1
    assert candidates[0].table_index == 1
    assert candidates[0].latex.startswith("\\begin{table*}")
    assert candidates[0].latex.endswith("\\end{table*}")


def test_sidewaystable_captured():
    latex = table_env("rotated", env="sidewaystable")
    assert len(extract_tables(paper(latex))) == 1


def test_commented_out_environment_ignored():
    commented = "\n".join("% " + line for line in table_env("X", "Dead").split("\n"))
    latex = commented + "\n" + table_env("Y", "Live")
    candidates = extract_tables(paper(latex))
    assert len(candidates) == 1
    assert candidates[0].caption == "Live"


def test_nine_environment_fixture_hand_count():
    # replica layout of a results-heavy paper: 6 table, 2 table*, 1 sidewaystable,
    # plus one commented-out table that must not count
    parts = ["\\documentclass{article}", "\\begin{document}"]
    for i in range(6):
        parts.append(f"Text {i}.")
        parts.append(table_env(f"body{i}", f"Table {i}"))
    parts.append(table_env("wide1", "W1", env="table*"))
    parts.append("% \\begin{table} hidden \\end{table}")
    parts.append(table_env("wide2", "W2", env="table*"))
    parts.append(table_env("rot", "R", env="sidewaystable"))
    parts.append("\\end{document}")
    candidates = extract_tables(paper("\n".join(parts)))
    assert len(candidates) == 9
    assert [c.table_index for c in candidates] == list(range(1, 10))


def test_concatenation_preserves_relative_order():
    latex = table_env("AAA", "a") + "\nx\n" + table_env("BBB", "b") + "\ny\n" + table_env("CCC", "c")
    candidates = extract_tables(paper(latex))
    joined = "".join(c.latex for c in sorted(candidates, key=lambda c: c.table_index))
    assert joined.index("AAA") < joined.index("BBB") < joined.index("CCC")


def test_nested_tabular_stays_inside_candidate():
    body = "\\begin{tabular}{cc} a & b \\\\ \\end{tabular}"
    candidates = extract_tables(paper(table_env(body)))
    assert len(candidates) == 1
    assert "tabular" in candidates[0].latex


def test_extract_tables_pure():
    source = paper(table_env("A") + table_env("B"))
    first = extract_tables(source)
    second = extract_tables(source)
    assert [(c.table_index, c.latex) for c in first] == [(c.table_index, c.latex) for c in second]


# -- captions ----------------------------------------------------------------

def test_caption_simple():
    assert extract_caption_text("\\begin{table}\\caption{Results on X}\\end{table}") == "Results on X"


def test_caption_absent():
    assert extract_caption_text("\\begin{table}no caption here\\end{table}") == ""


def test_caption_nested_braces():
    latex = "\\begin{table}\\caption{A {B} C}\\end{table}"
    assert extract_caption_text(latex) == "A {B} C"


def test_caption_with_short_form():
    latex = "\\begin{table}\\caption[short]{Long {v}ersion}\\end{table}"
    assert extract_caption_text(latex) == "Long {v}ersion"


def test_caption_unbalanced_braces():
    with pytest.raises(UnbalancedBraces):
        extract_caption_text("\\caption{never closes")


def test_extract_caption_of_candidate():
    candidate = TableCandidate(paper_id="p", table_index=1,
                               latex="\\begin{table}\\caption{Hi}\\end{table}")
    assert extract_caption(candidate) == "Hi"


# -- context ----------------------------------------------------------------

def test_context_strips_comments():
    latex = "Keep this.\n% drop this line\nAnd keep 50\\% of that.\n"
    context = build_context(paper(latex))
    assert "drop this" not in context.text
    assert "50\\%" in context.text
    assert not any(line.lstrip().startswith("%") for line in context.text.splitlines())


def test_context_drops_bibliography_command():
    latex = "Body text.\n\\bibliography{refs}\nMore text.\n"
    context = build_context(paper(latex))
    assert "\\bibliography" not in context.text
    assert "Body text." in context.text


def test_context_drops_thebibliography_block():
    latex = ("Pre.\n\\begin{thebibliography}{9}\\bibitem{a} A.\\end{thebibliography}\nPost.")
    context = build_context(paper(latex))
    assert "bibitem" not in context.text
    assert "Pre." in context.text and "Post." in context.text


def test_context_drops_acknowledgments_section():
    latex = ("\\section{Results}\ngood stuff\n"
             "\\section{Acknowledgments}\nthanks everyone\n"
             "\\section{Conclusion}\nthe end\n")
    context = build_context(paper(latex))
    assert "thanks everyone" not in context.text
    assert "good stuff" in context.text and "the end" in context.text


def test_context_keeps_tables_and_captions():
    latex = "\\section{Results}\n" + table_env("1 & 2", "Scores")
    context = build_context(paper(latex))
    assert "Scores" in context.text


def test_context_budget_truncates_at_paragraph_boundary():
    paragraphs = [f"para{i} " + ("word " * 120).strip() for i in range(100)]
    latex = "\n\n".join(paragraphs)
    budget = 4000  # roughly a quarter of the full text's token estimate
    context = build_context(paper(latex), token_budget=budget)
    assert len(context.text) < len(latex)
    assert context.text.endswith(paragraphs[len(context.text.split("\n\n")) - 1])
    # prefix property: truncation only removes from the end
    assert latex.startswith(context.text)


def test_context_within_budget_untouched():
    latex = "short body\n\nwith two paragraphs"
    assert build_context(paper(latex), token_budget=1000).text == latex


# -- citation resolution -----------------------------------------------------

def test_resolve_citation_direct_pattern():
    source = paper("x", bibliography={"patel2021nlp": "A. Patel. arXiv:2103.07191, 2021."})
    assert resolve_citation("patel2021nlp", source) == "2103.07191"


def test_resolve_citation_no_marker():
    source = paper("x", bibliography={"smith2020": "J. Smith. JMLR, 2020."})
    assert resolve_citation("smith2020", source) is None


def test_resolve_citation_url_with_version():
    source = paper("x", bibliography={
        "yang2018hotpotqa": "HotpotQA. https://arxiv.org/abs/1809.09600v2."})
    assert resolve_citation("yang2018hotpotqa", source) == "1809.09600"


def test_resolve_citation_unknown_tag():
    assert resolve_citation("ghost", paper("x")) is None


def test_resolve_citation_empty_tag_rejected():
    with pytest.raises(ValueError):
        resolve_citation("", paper("x"))
