"""Quality filter: three judge dimensions over markdown-table batch I/O, then the retention gate.

Every pair is scored on relevance, clarity, and centrality. A pair enters the
benchmark only when relevance >= 4 and clarity and centrality are both at the
maximum. Judge misbehavior never admits an item: a pair whose score cannot be
parsed after the corrective retry is rejected with a recorded cause.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .errors import (
    DuplicateRow,
    MissingAbstract,
    MissingRow,
    ScoreOutOfRange,
    UnparseableTable,
)
from .extraction import QAPair
from .gateway import ModelGateway, ModelRequest, assistant, user
from .prompts import render_filter_prompt

logger = logging.getLogger(__name__)

DIMENSIONS = ("relevance", "clarity", "centrality")

RELEVANCE_THRESHOLD = 4
CLARITY_THRESHOLD = 5
CENTRALITY_THRESHOLD = 5


@dataclass(frozen=True)
class FilterScores:
    relevance: int
    clarity: int
    centrality: int

    def __post_init__(self) -> None:
        for name in DIMENSIONS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise ValueError(f"{name} score must be an integer in 1..5, got {value!r}")

    def to_dict(self) -> dict:
        return {"relevance": self.relevance, "clarity": self.clarity, "centrality": self.centrality}


@dataclass(frozen=True)
class GateThresholds:
    relevance: int = RELEVANCE_THRESHOLD
    clarity: int = CLARITY_THRESHOLD
    centrality: int = CENTRALITY_THRESHOLD

    @property
    def canonical(self) -> bool:
        return (
            self.relevance == RELEVANCE_THRESHOLD
            and self.clarity == CLARITY_THRESHOLD
            and self.centrality == CENTRALITY_THRESHOLD
        )

    def to_dict(self) -> dict:
        return {"relevance": self.relevance, "clarity": self.clarity, "centrality": self.centrality}


def apply_gate(scores: FilterScores, thresholds: GateThresholds = GateThresholds()) -> bool:
    return (
        scores.relevance >= thresholds.relevance
        and scores.clarity >= thresholds.clarity
        and scores.centrality >= thresholds.centrality
    )


@dataclass(frozen=True)
class FilterVerdict:
    """Retention decision for one pair; scores are absent when judging failed."""

    qa_id: str
    scores: FilterScores | None
    retained: bool
    judge_model: str
    failure_cause: str | None = None

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "scores": self.scores.to_dict() if self.scores else None,
            "retained": self.retained,
            "judge_model": self.judge_model,
            "failure_cause": self.failure_cause,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "FilterVerdict":
        scores = payload.get("scores")
        return cls(
            qa_id=payload["qa_id"],
            scores=FilterScores(**scores) if scores else None,
            retained=payload["retained"],
            judge_model=payload["judge_model"],
            failure_cause=payload.get("failure_cause"),
        )


def escape_cell(text: str) -> str:
    """One table row per item: pipes escaped, newlines collapsed to a space."""
    return re.sub(r"\s*\r?\n\s*", " ", text.replace("|", "\\|")).strip()


def build_filter_prompt(
    dimension: str,
    batch: Sequence[QAPair],
    field_name: str,
    *,
    model_id: str,
    abstracts: Mapping[str, str] | None = None,
    decoding: Mapping[str, Any] | None = None,
) -> ModelRequest:
    """Render the judge prompt for one dimension plus the batch input table."""
    if dimension not in DIMENSIONS:
        raise ValueError(f"unknown filter dimension {dimension!r}")
    if not batch:
        raise ValueError("batch must be non-empty")
    prompt = render_filter_prompt(dimension, field_name)
    if dimension == "centrality":
        if abstracts is None:
            raise MissingAbstract("centrality batches need the source abstracts")
        rows = ["| id | abstract | question | answer |", "|---|---|---|---|"]
        for pair in batch:
            abstract = abstracts.get(pair.abstract_id)
            if not abstract:
                raise MissingAbstract(f"no abstract for {pair.abstract_id!r}")
            rows.append(
                f"| {escape_cell(pair.qa_id)} | {escape_cell(abstract)} "
                f"| {escape_cell(pair.question)} | {escape_cell(pair.answer)} |"
            )
    else:
        rows = ["| id | question | answer |", "|---|---|---|"]
        for pair in batch:
            rows.append(
                f"| {escape_cell(pair.qa_id)} | {escape_cell(pair.question)} "
                f"| {escape_cell(pair.answer)} |"
            )
    content = prompt + "\n" + "\n".join(rows)
    return ModelRequest(model_id=model_id, messages=(user(content),), decoding=dict(decoding or {}))


_SCORE_RE = re.compile(r"^-?\d+$")


def _split_row(line: str) -> list[str] | None:
    stripped = line.strip()
    if not stripped.startswith("|") or stripped.count("|") < 2:
        return None
    raw_cells = re.split(r"(?<!\\)\|", stripped.strip("|"))
    return [cell.replace("\\|", "|").strip() for cell in raw_cells]


def _is_separator(cells: Sequence[str]) -> bool:
    return all(cell and set(cell) <= set(":-") for cell in cells)


def collect_score_rows(
    text: str, expected_ids: Sequence[str]
) -> tuple[dict[str, int], dict[str, str]]:
    """Lenient scan: usable scores plus per-id issues, never raising.

    Used both by the strict parser and by the salvage path after a failed
    corrective retry.
    """
    expected = set(expected_ids)
    scores: dict[str, int] = {}
    issues: dict[str, str] = {}
    seen: set[str] = set()
    saw_row = False
    for line in text.splitlines():
        cells = _split_row(line)
        if cells is None or len(cells) < 2 or _is_separator(cells):
            continue
        row_id, score_text = cells[0], cells[1]
        if row_id.lower() == "id" or row_id.startswith("<"):
            continue
        saw_row = True
        if row_id not in expected:
            continue
        if row_id in seen:
            scores.pop(row_id, None)
            issues[row_id] = "DuplicateRow"
            continue
        seen.add(row_id)
        if not _SCORE_RE.match(score_text):
            issues[row_id] = "ScoreOutOfRange"
            continue
        value = int(score_text)
        if not 1 <= value <= 5:
            issues[row_id] = "ScoreOutOfRange"
            continue
        scores[row_id] = value
    if not saw_row:
        issues["__table__"] = "UnparseableTable"
    for row_id in expected:
        if row_id not in scores and row_id not in issues:
            issues[row_id] = "MissingRow"
    return scores, issues


def parse_score_table(text: str, expected_ids: Sequence[str]) -> dict[str, int]:
    """Strict parse of `| <id> | <score> |` rows; every expected id exactly once."""
    if not expected_ids:
        raise ValueError("expected_ids must be non-empty")
    if len(set(expected_ids)) != len(expected_ids):
        raise ValueError("expected_ids must be unique")
    if not isinstance(text, str):
        raise UnparseableTable("judge output is not text")
    scores, issues = collect_score_rows(text, expected_ids)
    if issues.get("__table__") == "UnparseableTable":
        raise UnparseableTable("no table rows found in judge output")
    for row_id in expected_ids:
        cause = issues.get(row_id)
        if cause == "DuplicateRow":
            raise DuplicateRow(row_id)
        if cause == "ScoreOutOfRange":
            raise ScoreOutOfRange(row_id)
    for row_id in expected_ids:
        if issues.get(row_id) == "MissingRow":
            raise MissingRow(row_id)
    return {row_id: scores[row_id] for row_id in expected_ids}


@dataclass
class FilterOutcome:
    retained: list[QAPair]
    verdicts: list[FilterVerdict]


def _score_batch(
    dimension: str,
    batch: Sequence[QAPair],
    field_name: str,
    judge_model: str,
    gateway: ModelGateway,
    *,
    abstracts: Mapping[str, str] | None,
    retry_limit: int,
    decoding: Mapping[str, Any] | None,
) -> tuple[dict[str, int], dict[str, str]]:
    request = build_filter_prompt(
        dimension,
        batch,
        field_name,
        model_id=judge_model,
        abstracts=abstracts,
        decoding=decoding,
    )
    expected = [pair.qa_id for pair in batch]
    messages = list(request.messages)
    last_text = ""
    for attempt in range(1 + retry_limit):
        response = gateway.complete(
            ModelRequest(model_id=judge_model, messages=tuple(messages), decoding=request.decoding)
        )
        last_text = response.text
        try:
            return parse_score_table(response.text, expected), {}
        except (MissingRow, DuplicateRow, ScoreOutOfRange, UnparseableTable) as exc:
            if attempt < retry_limit:
                messages.append(assistant(response.text or "(empty reply)"))
                messages.append(
                    user(
                        f"That table was invalid: {exc}. Output ONLY the table in the OUTPUT "
                        "FORMAT, one row per input id, each score an integer from 1 to 5."
                    )
                )
    # Salvage whatever parsed from the final reply; unresolved ids keep their cause.
    scores, issues = collect_score_rows(last_text, expected)
    issues.pop("__table__", None)
    causes = {row_id: f"{dimension}:{cause}" for row_id, cause in issues.items()}
    for row_id in expected:
        if row_id not in scores and row_id not in causes:
            causes[row_id] = f"{dimension}:JudgeExhausted"
    return scores, causes


def filter_snapshot(
    qapairs: Sequence[QAPair],
    abstracts: Mapping[str, str],
    judge_model: str,
    gateway: ModelGateway,
    *,
    batch_size: int = 20,
    retry_limit: int = 1,
    thresholds: GateThresholds = GateThresholds(),
    decoding: Mapping[str, Any] | None = None,
    max_workers: int = 4,
) -> FilterOutcome:
    """Score all three dimensions for every pair (batched) and apply the gate.

    Batches group pairs by subdomain because the relevance judge is
    instantiated per field. Verdicts are emitted for retained and rejected
    pairs alike; retained output is ordered by qa_id.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    for pair in qapairs:
        if pair.abstract_id not in abstracts:
            raise MissingAbstract(f"no abstract for {pair.abstract_id!r}")

    by_subdomain: dict[str, list[QAPair]] = {}
    for pair in sorted(qapairs, key=lambda p: p.qa_id):
        by_subdomain.setdefault(pair.subdomain, []).append(pair)

    jobs: list[tuple[str, list[QAPair], str]] = []
    for subdomain in sorted(by_subdomain):
        pairs = by_subdomain[subdomain]
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start : start + batch_size]
            for dimension in DIMENSIONS:
                jobs.append((dimension, batch, subdomain))

    def _run(job: tuple[str, list[QAPair], str]) -> tuple[str, dict[str, int], dict[str, str]]:
        dimension, batch, subdomain = job
        scores, causes = _score_batch(
            dimension,
            batch,
            subdomain,
            judge_model,
            gateway,
            abstracts=abstracts if dimension == "centrality" else None,
            retry_limit=retry_limit,
            decoding=decoding,
        )
        return dimension, scores, causes

    dim_scores: dict[str, dict[str, int]] = {d: {} for d in DIMENSIONS}
    dim_causes: dict[str, dict[str, str]] = {d: {} for d in DIMENSIONS}
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        for dimension, scores, causes in pool.map(_run, jobs):
            dim_scores[dimension].update(scores)
            dim_causes[dimension].update(causes)

    retained: list[QAPair] = []
    verdicts: list[FilterVerdict] = []
    for pair in sorted(qapairs, key=lambda p: p.qa_id):
        causes = [dim_causes[d][pair.qa_id] for d in DIMENSIONS if pair.qa_id in dim_causes[d]]
        if causes:
            verdicts.append(
                FilterVerdict(
                    qa_id=pair.qa_id,
                    scores=None,
                    retained=False,
                    judge_model=judge_model,
                    failure_cause="; ".join(sorted(causes)),
                )
            )
            logger.warning("rejected %s without full scores: %s", pair.qa_id, causes)
            continue
        scores = FilterScores(
            relevance=dim_scores["relevance"][pair.qa_id],
            clarity=dim_scores["clarity"][pair.qa_id],
            centrality=dim_scores["centrality"][pair.qa_id],
        )
        keep = apply_gate(scores, thresholds)
        verdicts.append(
            FilterVerdict(qa_id=pair.qa_id, scores=scores, retained=keep, judge_model=judge_model)
        )
        if keep:
            retained.append(pair)
    return FilterOutcome(retained=retained, verdicts=verdicts)
