from __future__ import annotations

import itertools

import pytest

from dbench.errors import (
    DuplicateRow,
    MissingAbstract,
    MissingRow,
    ScoreOutOfRange,
    UnparseableTable,
)
from dbench.extraction import QAPair
from dbench.filtering import (
    FilterScores,
    GateThresholds,
    apply_gate,
    build_filter_prompt,
    escape_cell,
    filter_snapshot,
    parse_score_table,
)

from helpers import register_recording


def pair(qa_id: str, subdomain: str = "Neurosciences", answer: str = "1. A.") -> QAPair:
    return QAPair(
        qa_id=qa_id,
        abstract_id=qa_id.removesuffix("#qa"),
        question="Does X regulate Y?",
        answer=answer,
        subdomain=subdomain,
        snapshot_id="2025-12",
    )


# --- prompt rendering --------------------------------------------------------


def test_relevance_prompt_substitutes_field_and_renders_rows():
    batch = [pair("q1#qa"), pair("q2#qa")]
    prompt = build_filter_prompt("relevance", batch, "Neurosciences", model_id="j")
    content = prompt.messages[0].content
    assert "expert specializing in Neurosciences" in content
    assert "{field}" not in content
    rows = [line for line in content.splitlines() if line.startswith("| q")]
    assert len(rows) == 2


def test_centrality_requires_abstracts():
    batch = [pair("q1#qa")]
    with pytest.raises(MissingAbstract):
        build_filter_prompt("centrality", batch, "Neurosciences", model_id="j", abstracts={})
    content = build_filter_prompt(
        "centrality", batch, "Neurosciences", model_id="j", abstracts={"q1": "the abstract"}
    ).messages[0].content
    assert "| id | abstract | question | answer |" in content
    assert "the abstract" in content


def test_pipe_escaping_preserves_row_count():
    batch = [pair("q1#qa", answer="1. Uses A|B notation."), pair("q2#qa")]
    content = build_filter_prompt("clarity", batch, "Neurosciences", model_id="j").messages[0].content
    rows = [line for line in content.splitlines() if line.startswith("| q")]
    assert len(rows) == 2
    assert "A\\|B" in content


def test_escape_cell_collapses_newlines():
    assert escape_cell("1. a\n2. b") == "1. a 2. b"
    assert escape_cell("x|y") == "x\\|y"


# --- score-table parsing -----------------------------------------------------


def test_parse_happy_path():
    text = "| id | score |\n|---|---|\n| q1 | 5 |\n| q2 | 4 |"
    assert parse_score_table(text, ["q1", "q2"]) == {"q1": 5, "q2": 4}


def test_parse_ignores_prose_and_unknown_rows():
    text = (
        "Here are my scores:\n\n| id | score |\n|---|---|\n| q1 | 3 |\n"
        "| mystery | 5 |\nThanks for asking!"
    )
    assert parse_score_table(text, ["q1"]) == {"q1": 3}


def test_parse_missing_row():
    with pytest.raises(MissingRow) as info:
        parse_score_table("| id | score |\n|---|---|\n| q1 | 5 |", ["q1", "q2"])
    assert info.value.row_id == "q2"


def test_parse_duplicate_row():
    with pytest.raises(DuplicateRow):
        parse_score_table("| q1 | 5 |\n| q1 | 4 |", ["q1"])


@pytest.mark.parametrize("cell", ["6", "0", "-1", "4.5", "five", ""])
def test_parse_score_out_of_range(cell):
    with pytest.raises(ScoreOutOfRange):
        parse_score_table(f"| q1 | {cell} |", ["q1"])


def test_parse_unparseable_table():
    with pytest.raises(UnparseableTable):
        parse_score_table("I refuse to produce tables.", ["q1"])


def test_parse_requires_expected_ids():
    with pytest.raises(ValueError):
        parse_score_table("| q1 | 5 |", [])
    with pytest.raises(ValueError):
        parse_score_table("| q1 | 5 |", ["q1", "q1"])


def test_parse_tolerates_escaped_pipes_in_ids():
    assert parse_score_table("| a\\|b | 4 |", ["a|b"]) == {"a|b": 4}


# --- the retention gate ------------------------------------------------------


def test_gate_spec_examples():
    assert apply_gate(FilterScores(4, 5, 5)) is True
    assert apply_gate(FilterScores(5, 4, 5)) is False
    assert apply_gate(FilterScores(3, 5, 5)) is False


def test_gate_exhaustive_against_brute_force():
    retained = 0
    for r, c, k in itertools.product(range(1, 6), repeat=3):
        expected = r in (4, 5) and c == 5 and k == 5
        assert apply_gate(FilterScores(r, c, k)) is expected
        retained += expected
    # |{4,5} x {5} x {5}|: the threshold rule admits exactly these triples
    assert retained == 2


def test_scores_validated():
    with pytest.raises(ValueError):
        FilterScores(0, 5, 5)
    with pytest.raises(ValueError):
        FilterScores(4, 5, 6)


def test_noncanonical_thresholds_flagged():
    assert GateThresholds().canonical
    assert not GateThresholds(relevance=3).canonical
    assert apply_gate(FilterScores(3, 5, 5), GateThresholds(relevance=3)) is True


# --- filter_snapshot ---------------------------------------------------------


def table(scores: dict[str, int]) -> str:
    rows = "\n".join(f"| {k} | {v} |" for k, v in scores.items())
    return f"| id | score |\n|---|---|\n{rows}"


def scripted_judge(registry, relevance, clarity, centrality):
    def replies(request, n):
        content = request.messages[0].content
        if "Field Relevance Scorer" in content:
            return table(relevance)
        if "Access the clarity" in content:
            return table(clarity)
        return table(centrality)

    return register_recording(registry, "judge", replies)


def test_filter_snapshot_applies_gate(registry, gateway):
    pairs = [pair("p1#qa"), pair("p2#qa"), pair("p3#qa")]
    abstracts = {p.abstract_id: "abstract text" for p in pairs}
    scripted_judge(
        registry,
        relevance={"p1#qa": 5, "p2#qa": 4, "p3#qa": 5},
        clarity={"p1#qa": 5, "p2#qa": 5, "p3#qa": 5},
        centrality={"p1#qa": 5, "p2#qa": 5, "p3#qa": 4},
    )
    outcome = filter_snapshot(pairs, abstracts, "judge", gateway)
    assert [p.qa_id for p in outcome.retained] == ["p1#qa", "p2#qa"]
    assert len(outcome.verdicts) == 3
    rejected = [v for v in outcome.verdicts if not v.retained]
    assert [v.qa_id for v in rejected] == ["p3#qa"]
    assert rejected[0].scores.centrality == 4
    assert all(v.judge_model == "judge" for v in outcome.verdicts)


def test_filter_batching_arithmetic(registry, gateway):
    pairs = [pair(f"p{i}#qa") for i in range(5)]
    abstracts = {p.abstract_id: "a" for p in pairs}
    all_scores = {p.qa_id: 5 for p in pairs}
    provider = scripted_judge(registry, all_scores, all_scores, all_scores)
    filter_snapshot(pairs, abstracts, "judge", gateway, batch_size=2)
    relevance_calls = [
        r for r in provider.requests if "Field Relevance Scorer" in r.messages[0].content
    ]
    assert len(relevance_calls) == 3  # ceil(5 / 2)


def test_missing_abstract_precondition(registry, gateway):
    with pytest.raises(MissingAbstract):
        filter_snapshot([pair("p1#qa")], {}, "judge", gateway)


def test_judge_omission_rejects_conservatively(registry, gateway):
    pairs = [pair("p1#qa"), pair("p2#qa")]
    abstracts = {p.abstract_id: "a" for p in pairs}

    def replies(request, n):
        content = request.messages[0].content
        if "Field Relevance Scorer" in content:
            return table({"p1#qa": 5})  # always omits p2
        return table({"p1#qa": 5, "p2#qa": 5})

    provider = register_recording(registry, "judge", replies)
    outcome = filter_snapshot(pairs, abstracts, "judge", gateway, retry_limit=1)
    assert [p.qa_id for p in outcome.retained] == ["p1#qa"]
    verdict = {v.qa_id: v for v in outcome.verdicts}["p2#qa"]
    assert verdict.retained is False
    assert verdict.scores is None
    assert "MissingRow" in verdict.failure_cause
    # the corrective retry happened: two relevance calls total
    relevance_calls = [
        r for r in provider.requests if "Field Relevance Scorer" in r.messages[0].content
    ]
    assert len(relevance_calls) == 2
    # verdict conservation: every pair accounted for exactly once
    assert len(outcome.verdicts) == len(pairs)


def test_unparseable_judge_rejects_all_in_batch(registry, gateway):
    pairs = [pair("p1#qa"), pair("p2#qa")]
    abstracts = {p.abstract_id: "a" for p in pairs}

    def replies(request, n):
        content = request.messages[0].content
        if "centrality" in content:
            return "no table today"
        return table({"p1#qa": 5, "p2#qa": 5})

    register_recording(registry, "judge", replies)
    outcome = filter_snapshot(pairs, abstracts, "judge", gateway, retry_limit=1)
    assert outcome.retained == []
    assert all("centrality" in v.failure_cause for v in outcome.verdicts)


def test_score_provenance_never_defaults_to_pass(registry, gateway):
    # a judge that errors on one id must not let that id through
    pairs = [pair("p1#qa")]
    abstracts = {"p1": "a"}

    def replies(request, n):
        content = request.messages[0].content
        if "Access the clarity" in content:
            return table({"p1#qa": 9})  # out of range both attempts
        return table({"p1#qa": 5})

    register_recording(registry, "judge", replies)
    outcome = filter_snapshot(pairs, abstracts, "judge", gateway, retry_limit=1)
    assert outcome.retained == []
    assert "ScoreOutOfRange" in outcome.verdicts[0].failure_cause


def test_batches_group_by_subdomain(registry, gateway):
    pairs = [pair("p1#qa", subdomain="Neurosciences"), pair("p2#qa", subdomain="Cell biology")]
    abstracts = {p.abstract_id: "a" for p in pairs}
    scores = {p.qa_id: 5 for p in pairs}
    provider = scripted_judge(registry, scores, scores, scores)
    filter_snapshot(pairs, abstracts, "judge", gateway)
    relevance_calls = [
        r.messages[0].content
        for r in provider.requests
        if "Field Relevance Scorer" in r.messages[0].content
    ]
    # one relevance call per subdomain, each naming its own field
    assert len(relevance_calls) == 2
    assert any("Cell biology" in c for c in relevance_calls)
    assert any("Neurosciences" in c for c in relevance_calls)
