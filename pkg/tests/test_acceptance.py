"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the pass lines and
timings on the terminal.
"""

from __future__ import annotations

import itertools
import json
import random
import time
from datetime import date, timedelta

import pytest

from dbench.alt_test import AltTestResult, compute_alt_test, passes_replacement_criterion
from dbench.config import load_config
from dbench.corpus import SourceSpec, TemporalWindow, fetch_abstracts
from dbench.errors import DbenchError
from dbench.evaluation import EvaluationRecord, JudgeVerdict, aggregate, parse_judge_output
from dbench.extraction import QAPair, parse_extraction_output
from dbench.filtering import FilterScores, apply_gate, parse_score_table
from dbench.fixtures import fixture_path
from dbench.gateway import ModelGateway, ModelRegistry, ModelSpec
from dbench.ioutil import read_jsonl
from dbench.pipeline import SnapshotPipeline, load_manifest
from dbench.search import LocalSearchIndex
from dbench.solvers import SolverConfig, run_rag, run_react, run_solver

from helpers import DEFAULT_ALLOWLIST, register_recording
from oracle_alt_test import brute_force_alt_test

SNAP = "2025-12"


def report(number: int, elapsed: float, budget: float, detail: str) -> None:
    print(f"ACCEPTANCE {number} PASS: {detail} ({elapsed:.2f}s < {budget:.0f}s)")
    assert elapsed < budget


# --- criterion 1: gate exactness ---------------------------------------------


def test_criterion_1_gate_exactness():
    started = time.perf_counter()
    retained = []
    for r, c, k in itertools.product(range(1, 6), repeat=3):
        brute_force = r >= 4 and c >= 5 and k >= 5
        assert apply_gate(FilterScores(r, c, k)) is brute_force
        if brute_force:
            retained.append((r, c, k))
    # the threshold predicate admits exactly {4,5} x {5} x {5}
    assert retained == [(4, 5, 5), (5, 5, 5)]
    report(
        1,
        time.perf_counter() - started,
        1.0,
        f"gate matches brute-force predicate on all 125 triples; {len(retained)} retained",
    )


# --- criterion 2: alt-test oracle equivalence ---------------------------------


def test_criterion_2_alt_test_oracle_equivalence():
    from test_alt_test import matrix

    started = time.perf_counter()
    rng = random.Random(0xA17)
    for _ in range(1000):
        n_humans = rng.randint(2, 3)
        n_items = rng.randint(1, 6)
        items = [f"i{k}" for k in range(n_items)]
        humans = {f"h{j}": [rng.randint(1, 5) for _ in items] for j in range(n_humans)}
        llm = [rng.randint(1, 5) for _ in items]
        result = compute_alt_test(matrix(items, humans, llm))
        scores = {a: dict(zip(items, vals)) for a, vals in humans.items()}
        scores["llm"] = dict(zip(items, llm))
        oracle = brute_force_alt_test(items, list(humans), scores, "llm")
        assert result.winning_rate == oracle["winning_rate"]
        assert result.advantage_probability == oracle["advantage_probability"]
        for outcome in result.per_annotator:
            assert outcome.rho == oracle["per_annotator"][outcome.annotator_id]["rho"]

    # fixed points
    items = [f"i{k}" for k in range(6)]
    same = [rng.randint(1, 5) for _ in items]
    agree = compute_alt_test(matrix(items, {"h1": same, "h2": same, "h3": same}, same))
    assert (agree.winning_rate, agree.advantage_probability) == (1.0, 1.0)
    disagree = compute_alt_test(
        matrix(items, {"h1": [5] * 6, "h2": [5] * 6, "h3": [5] * 6}, [1] * 6)
    )
    assert disagree.advantage_probability == 0.0
    report(
        2,
        time.perf_counter() - started,
        10.0,
        "1000 random matrices match the brute-force oracle exactly, plus both fixed points",
    )


# --- criterion 3: replacement criterion on published values -------------------


def test_criterion_3_replacement_criterion():
    started = time.perf_counter()
    published = [(1.00, 0.99), (1.00, 0.89), (1.00, 0.99), (0.90, 0.86)]
    for rate, prob in published:
        assert passes_replacement_criterion(
            AltTestResult(winning_rate=rate, advantage_probability=prob)
        )
    for rate, prob in [(0.5, 0.99), (1.0, 0.80)]:
        assert not passes_replacement_criterion(
            AltTestResult(winning_rate=rate, advantage_probability=prob)
        )
    report(
        3,
        time.perf_counter() - started,
        1.0,
        "all four published pairs pass; both boundary pairs fail",
    )


# --- criterion 4: temporal soundness, end to end ------------------------------


@pytest.fixture(scope="module")
def synthetic_corpus(tmp_path_factory):
    rng = random.Random(20251201)
    root = tmp_path_factory.mktemp("synth")
    directory = root / "abstracts"
    directory.mkdir()
    journals = [entry.journal for entry in DEFAULT_ALLOWLIST]
    vocabulary = [
        "autophagy", "lysosome", "astrocyte", "melatonin", "kinase", "receptor",
        "plasticity", "succinate", "microglia", "proteasome", "lineage", "thermogenesis",
    ]
    docs = []
    for i in range(200):
        day = date(2025, 1, 1) + timedelta(days=rng.randrange(540))
        words = rng.sample(vocabulary, k=4)
        raw = {
            "abstract_id": f"d{i:03d}",
            "title": f"Report on {words[0]} and {words[1]}",
            "abstract": f"A study of {' '.join(words)} with controls.",
            "journal": rng.choice(journals),
            "publication_date": day.isoformat(),
            "retrieved_at": "2026-07-01T00:00:00+00:00",
        }
        (directory / f"d{i:03d}.json").write_text(json.dumps(raw), encoding="utf-8")
        docs.append(raw)
    return directory, docs, vocabulary


def test_criterion_4_temporal_soundness(synthetic_corpus):
    directory, docs, vocabulary = synthetic_corpus
    started = time.perf_counter()
    rng = random.Random(4242)
    source = SourceSpec(
        source_id="synth",
        kind="local_directory",
        allowlist=DEFAULT_ALLOWLIST,
        config={"path": str(directory)},
    )
    from dbench.search import SearchDocument

    index = LocalSearchIndex(
        [
            SearchDocument(
                doc_id=raw["abstract_id"],
                title=raw["title"],
                abstract_text=raw["abstract"],
                publication_date=date.fromisoformat(raw["publication_date"]),
            )
            for raw in docs
        ]
    )
    dates = {raw["abstract_id"]: date.fromisoformat(raw["publication_date"]) for raw in docs}

    registry = ModelRegistry()
    registry.register(ModelSpec(model_id="stub", provider="stub"))
    gateway = ModelGateway(registry, permits=4, sleep=lambda _s: None)

    checked_records = 0
    checked_citations = 0
    for _ in range(50):
        start = date(2025, 1, 1) + timedelta(days=rng.randrange(500))
        window = TemporalWindow(start, start + timedelta(days=rng.randrange(5, 60)))
        cutoff = start - timedelta(days=rng.randrange(1, 90))
        records = fetch_abstracts(source, window)
        for record in records:
            assert window.contains(record.publication_date)
        checked_records += len(records)

        question = f"Does {rng.choice(vocabulary)} interact with {rng.choice(vocabulary)}?"
        for kind in ("rag", "react"):
            config = SolverConfig(
                solver_id=f"{kind}-synth", kind=kind, backbone="stub",
                cutoff_date=cutoff, max_steps=3, max_results=5,
            )
            answer = run_solver(config, "q", question, gateway, index)
            for step in answer.trace.steps if answer.trace else []:
                if step.action:
                    for doc_id in step.action["doc_ids"]:
                        assert dates[doc_id] < cutoff
                        checked_citations += 1
    report(
        4,
        time.perf_counter() - started,
        30.0,
        f"50 configs: {checked_records} snapshot records in-window, "
        f"{checked_citations} citations all pre-cutoff",
    )


# --- criterion 5: hermetic pipeline determinism -------------------------------


@pytest.fixture(scope="module")
def hermetic_runs(tmp_path_factory):
    config = load_config(fixture_path("config.yaml"))
    started = time.perf_counter()
    workspaces = []
    for run in range(2):
        workspace = tmp_path_factory.mktemp(f"run{run}") / "ws"
        SnapshotPipeline(config, workspace).run_all()
        workspaces.append(workspace)
    return workspaces, time.perf_counter() - started


def test_criterion_5_hermetic_determinism(hermetic_runs):
    (first, second), elapsed = hermetic_runs
    benchmark_a = (first / "bench" / SNAP / "benchmark.jsonl").read_bytes()
    benchmark_b = (second / "bench" / SNAP / "benchmark.jsonl").read_bytes()
    assert benchmark_a == benchmark_b and benchmark_a
    digests_a = {s: e["digest"] for s, e in load_manifest(first, SNAP)["stages"].items()}
    digests_b = {s: e["digest"] for s, e in load_manifest(second, SNAP)["stages"].items()}
    assert digests_a == digests_b
    assert set(digests_a) == {"acquire", "extract", "filter", "alttest", "solve", "judge", "report"}
    report(
        5,
        elapsed,
        20.0,
        "two full mock runs: benchmark.jsonl byte-identical, all 7 stage digests equal",
    )


# --- criterion 6: parser robustness -------------------------------------------


def test_criterion_6_parser_robustness():
    started = time.perf_counter()
    rng = random.Random(0xF022)

    def random_text() -> str:
        n = rng.randrange(0, 120)
        return bytes(rng.randrange(256) for _ in range(n)).decode("latin-1")

    parsers = [
        ("parse_extraction_output", lambda t: parse_extraction_output(t)),
        ("parse_score_table", lambda t: parse_score_table(t, ["q1", "q2"])),
        ("parse_judge_output", lambda t: parse_judge_output(t)),
    ]
    total = 0
    for name, parser in parsers:
        for _ in range(10_000):
            text = random_text()
            try:
                parser(text)
            except DbenchError:
                pass  # typed error: acceptable outcome
            total += 1
    report(6, time.perf_counter() - started, 60.0, f"{total} fuzz inputs, zero process aborts")


# --- criterion 7: solver call budgets -----------------------------------------


def test_criterion_7_solver_budgets():
    from dbench.search import SearchDocument

    started = time.perf_counter()
    rng = random.Random(777)
    index = LocalSearchIndex(
        [
            SearchDocument(f"s{i}", f"paper {i}", "kinase receptor pathway evidence",
                           date(2025, 1, 1 + i % 25))
            for i in range(30)
        ]
    )
    cutoff = date(2025, 11, 30)
    question = "Does the kinase receptor pathway matter?"

    def react_replies(finalize_after: int, junk_every: int):
        def replies(request, n):
            last = request.messages[-1].content
            if "step limit" in last:
                return "Final Answer: 1. Forced."
            observations = sum(
                1 for m in request.messages if m.content.startswith("Observation:")
            )
            if junk_every and n % junk_every == junk_every - 1:
                return "I decline to use the format."
            if observations >= finalize_after:
                return "Thought: done.\nFinal Answer: 1. Answered."
            return "Thought: searching.\nAction: search[kinase receptor]"

        return replies

    def workflow_replies(n_subproblems: int, revise: bool):
        def replies(request, n):
            system = request.messages[0].content
            if "Planner" in system:
                return "\n".join(f"{i}. part {i}" for i in range(1, n_subproblems + 1))
            if "Tool Caller" in system:
                return "\n".join(f"{i}. kinase {i}" for i in range(1, n_subproblems + 1))
            if "Reasoner" in system:
                return "synthesis"
            if "Reporter" in system:
                return "1. Revised." if "# Revision Request" in request.messages[1].content else "1. Draft."
            return "REVISE: expand." if revise else "APPROVE"

        return replies

    episodes = {"base": 0, "rag": 0, "react": 0, "workflow": 0}
    for episode in range(100):
        registry = ModelRegistry()
        gateway = ModelGateway(registry, permits=4, sleep=lambda _s: None)
        kind = rng.choice(["base", "rag", "react", "workflow"])
        episodes[kind] += 1
        if kind == "base":
            provider = register_recording(registry, "m", ["1. Answer."])
            config = SolverConfig(solver_id="b", kind="base", backbone="m", cutoff_date=cutoff)
            answer = run_solver(config, "q", question, gateway, index)
            assert answer.model_calls == 1 and provider.calls == 1
        elif kind == "rag":
            provider = register_recording(registry, "m", ["1. Answer."])
            config = SolverConfig(solver_id="r", kind="rag", backbone="m", cutoff_date=cutoff)
            answer = run_rag(config, "q", question, gateway, index)
            assert answer.model_calls == 1 and provider.calls == 1
            assert sum(1 for s in answer.trace.steps if s.action) == 1
        elif kind == "react":
            max_steps = rng.randint(1, 6)
            finalize_after = rng.randint(0, max_steps + 2)
            junk_every = rng.choice([0, 2, 3])
            provider = register_recording(registry, "m", react_replies(finalize_after, junk_every))
            config = SolverConfig(
                solver_id="re", kind="react", backbone="m", cutoff_date=cutoff, max_steps=max_steps
            )
            answer = run_react(config, "q", question, gateway, index)
            assert answer.model_calls <= max_steps + 1
            assert provider.calls <= max_steps + 1
            assert len(answer.trace.steps) <= max_steps
            assert answer.trace.terminated_by in ("final_answer", "step_limit")
            assert answer.text  # always terminates with an answer
        else:
            n_subproblems = rng.randint(1, 7)
            revise = rng.random() < 0.5
            provider = register_recording(registry, "m", workflow_replies(n_subproblems, revise))
            config = SolverConfig(solver_id="w", kind="workflow", backbone="m", cutoff_date=cutoff)
            answer = run_solver(config, "q", question, gateway, index)
            assert answer.model_calls in (5, 6)
            assert answer.model_calls == (6 if revise else 5)
            searches = sum(1 for s in answer.trace.steps if s.action)
            assert searches == min(n_subproblems, 5)
    report(
        7,
        time.perf_counter() - started,
        30.0,
        f"100 scripted episodes within budget: {episodes}",
    )


# --- criterion 8: aggregation correctness --------------------------------------


def test_criterion_8_aggregation_matches_naive_recomputation():
    started = time.perf_counter()
    rng = random.Random(88)
    for _ in range(50):
        n = rng.randint(1, 120)
        records = []
        subdomains = {}
        for i in range(n):
            qa_id = f"q{i}"
            records.append(
                EvaluationRecord(
                    qa_id=qa_id,
                    solver_id=f"s{rng.randint(0, 3)}",
                    candidate="c",
                    verdict=JudgeVerdict(score=rng.randint(1, 5), reason="r"),
                    judge_model="j",
                    snapshot_id=f"2025-{rng.choice(['11', '12'])}",
                )
            )
            subdomains[qa_id] = f"domain-{rng.randint(0, 11)}"
        group_by = rng.choice(
            [("solver",), ("solver", "subdomain"), ("solver", "subdomain", "snapshot")]
        )
        rows = aggregate(records, group_by, subdomains=subdomains)
        # naive recomputation
        naive: dict[tuple, list[int]] = {}
        for record in records:
            key = []
            for field in ("solver", "subdomain", "snapshot"):
                if field in group_by:
                    if field == "solver":
                        key.append(record.solver_id)
                    elif field == "subdomain":
                        key.append(subdomains[record.qa_id])
                    else:
                        key.append(record.snapshot_id)
            naive.setdefault(tuple(key), []).append(record.verdict.score)
        assert len(rows) == len(naive)
        for row in rows:
            key = tuple(row[f] for f in ("solver", "subdomain", "snapshot") if f in group_by)
            scores = naive[key]
            assert row["count"] == len(scores)
            assert row["mean_score"] == sum(scores) / len(scores)  # exact equality
            assert 1.0 <= row["mean_score"] <= 5.0
    report(8, time.perf_counter() - started, 10.0, "50 random record sets match the naive fold exactly")


# --- criterion 9: extraction shape conformance ---------------------------------


def test_criterion_9_extraction_shape(hermetic_runs):
    (workspace, _), _elapsed = hermetic_runs
    started = time.perf_counter()
    corpus_ids = set()
    for path in (workspace / "corpus" / SNAP).glob("*.jsonl"):
        if path.name != "skips.jsonl":
            corpus_ids.update(row["abstract_id"] for row in read_jsonl(path))
    pairs = [QAPair.from_dict(row) for row in read_jsonl(workspace / "qa" / SNAP / "raw.jsonl")]
    assert pairs
    seen_abstracts = []
    for pair in pairs:
        assert pair.question.endswith("?")
        lines = pair.answer.splitlines()
        assert lines
        for expected, line in enumerate(lines, start=1):
            assert line.startswith(f"{expected}. ")
        assert pair.qa_id == f"{pair.abstract_id}#qa"
        seen_abstracts.append(pair.abstract_id)
    assert len(seen_abstracts) == len(set(seen_abstracts))  # no duplicates
    assert set(seen_abstracts) <= corpus_ids
    report(
        9,
        time.perf_counter() - started,
        10.0,
        f"{len(pairs)} extracted pairs all well-shaped; abstract_id<->qa_id is a bijection",
    )
