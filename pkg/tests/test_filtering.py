import pytest

from evalmine.filtering import (
    DEFAULT_KEYWORDS,
    FilterVerdict,
    classify_leaderboard,
    filter_candidates,
    keyword_prefilter,
)
from evalmine.latex import TableCandidate

from conftest import make_gateway


def candidate(latex, index=1, paper_id="2301.00001"):
    return TableCandidate(paper_id=paper_id, table_index=index, latex=latex)


def test_keyword_hit_case_folded():
    c = candidate("\\begin{table} GPT-4 & 86 \\end{table}")
    assert keyword_prefilter(c, frozenset({"gpt", "gemini", "claude"}))


def test_keyword_miss():
    c = candidate("\\begin{table} Llama-2 & 70 \\end{table}")
    assert not keyword_prefilter(c, frozenset({"gpt", "gemini", "claude"}))


def test_keyword_substring_inside_name():
    c = candidate("\\begin{table} Gemini1.0-Pro & 27 \\end{table}")
    assert keyword_prefilter(c, DEFAULT_KEYWORDS)


def test_keyword_empty_set_rejected():
    with pytest.raises(ValueError):
        keyword_prefilter(candidate("x"), frozenset())


def test_prefilter_monotone_under_keyword_growth():
    c = candidate("table with claude mention")
    small = frozenset({"gpt"})
    large = small | {"claude", "gemini"}
    assert keyword_prefilter(c, small) is False
    assert keyword_prefilter(c, large) is True  # growth can only add hits


def test_classifier_true_false_mapping():
    gw_true = make_gateway(lambda p: "true")
    gw_false = make_gateway(lambda p: " False \n")
    c = candidate("\\begin{table} gpt \\end{table}")
    assert classify_leaderboard(c, gw_true) is True
    assert classify_leaderboard(c, gw_false) is False


def test_unparseable_verdict_keeps_candidate_flagged():
    gw = make_gateway(lambda p: "It is a leaderboard.")
    verdicts = filter_candidates([candidate("uses gpt-4")], gw)
    assert len(verdicts) == 1
    v = verdicts[0]
    assert v.keyword_pass is True
    assert v.leaderboard is None
    assert v.reason == "unparseable-verdict"
    assert v.keep  # fail open


def test_classifier_only_called_on_prefilter_pass(counting_gateway):
    gw, backend = counting_gateway(lambda p: "true")
    cands = [candidate("mentions llama only", index=1),
             candidate("mentions GPT-4", index=2),
             candidate("mentions claude", index=3)]
    verdicts = filter_candidates(cands, gw)
    assert backend.calls == 2  # prefilter misses never reach the model
    assert [v.keyword_pass for v in verdicts] == [False, True, True]
    assert verdicts[0].leaderboard is None
    assert not verdicts[0].keep


def test_not_leaderboard_not_kept():
    gw = make_gateway(lambda p: "false")
    verdicts = filter_candidates([candidate("gpt ablation table")], gw)
    assert verdicts[0].leaderboard is False
    assert not verdicts[0].keep
    assert verdicts[0].reason == "not-leaderboard"


def test_leaderboard_invariant_requires_keyword_pass():
    gw = make_gateway(lambda p: "true")
    verdicts = filter_candidates(
        [candidate("no target models here"), candidate("GPT-4 present")], gw)
    for v in verdicts:
        if v.leaderboard in (True, False):
            assert v.keyword_pass


def test_end_to_end_filtering_deterministic():
    responses = iter(["true", "false", "true", "false"])
    replies = {}

    def responder(prompt):
        if prompt not in replies:
            replies[prompt] = next(responses)
        return replies[prompt]

    cands = [candidate(f"gpt table {i}", index=i) for i in range(1, 3)]
    first = filter_candidates(cands, make_gateway(responder))
    second = filter_candidates(cands, make_gateway(responder))
    assert [(v.paper_id, v.table_index, v.keyword_pass, v.leaderboard) for v in first] == \
           [(v.paper_id, v.table_index, v.keyword_pass, v.leaderboard) for v in second]
