"""Scoring candidate answers against gold answers, plus result aggregation."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import (
    ArtifactExists,
    EmptyInput,
    JudgeExhausted,
    MissingCandidate,
    MissingReason,
    NotJson,
    ScoreOutOfRange,
)
from .extraction import QAPair
from .gateway import ModelGateway, ModelRequest, assistant, system, user
from .ioutil import read_jsonl, write_jsonl
from .prompts import EVALUATION_PROMPT
from .solvers import CandidateAnswer

logger = logging.getLogger(__name__)

GROUP_FIELDS = ("solver", "subdomain", "snapshot")


@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    reason: str

    def __post_init__(self) -> None:
        if not isinstance(self.score, int) or isinstance(self.score, bool) or not 1 <= self.score <= 5:
            raise ValueError("score must be an integer in 1..5")
        if not self.reason:
            raise ValueError("reason must be non-empty")

    def to_dict(self) -> dict:
        return {"score": self.score, "reason": self.reason}


@dataclass(frozen=True)
class EvaluationRecord:
    qa_id: str
    solver_id: str
    candidate: str
    verdict: JudgeVerdict
    judge_model: str
    snapshot_id: str

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "solver_id": self.solver_id,
            "candidate": self.candidate,
            "verdict": self.verdict.to_dict(),
            "judge_model": self.judge_model,
            "snapshot_id": self.snapshot_id,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "EvaluationRecord":
        verdict = payload["verdict"]
        return cls(
            qa_id=payload["qa_id"],
            solver_id=payload["solver_id"],
            candidate=payload["candidate"],
            verdict=JudgeVerdict(score=verdict["score"], reason=verdict["reason"]),
            judge_model=payload["judge_model"],
            snapshot_id=payload["snapshot_id"],
        )


def build_eval_prompt(
    gold: str,
    candidate: str,
    *,
    model_id: str,
    question: str | None = None,
    include_question: bool = False,
    decoding: Mapping[str, Any] | None = None,
) -> ModelRequest:
    """System message is the judge rubric; the user message carries both answers.

    By default the judge sees only the two answers. include_question is an
    explicit deviation toggle that prepends the question when enabled.
    """
    if not gold or not candidate:
        raise ValueError("gold and candidate texts must be non-empty")
    sections = []
    if include_question and question:
        sections.append(f"# Question\n{question}")
    sections.append(f"# Reference Answer\n{gold}")
    sections.append(f"# Candidate Answer\n{candidate}")
    return ModelRequest(
        model_id=model_id,
        messages=(system(EVALUATION_PROMPT), user("\n\n".join(sections))),
        decoding=dict(decoding or {}),
    )


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


def parse_judge_output(text: str) -> JudgeVerdict:
    """Extract {score, reason}; code fences are tolerated despite the prompt's note."""
    if not isinstance(text, str):
        raise NotJson("judge output is not text")
    candidate = text
    fenced = _FENCE_RE.search(text)
    if fenced:
        candidate = fenced.group(1)
    start = candidate.find("{")
    end = candidate.rfind("}")
    if start == -1 or end == -1 or end <= start:
        raise NotJson("no JSON object in judge output")
    try:
        parsed = json.loads(candidate[start : end + 1])
    except ValueError as exc:
        raise NotJson(f"judge output is not valid JSON: {exc}") from exc
    if not isinstance(parsed, dict):
        raise NotJson("judge output is not a JSON object")
    score = parsed.get("score")
    if isinstance(score, bool) or not isinstance(score, int) or not 1 <= score <= 5:
        raise ScoreOutOfRange(str(score), f"judge score must be an integer 1..5, got {score!r}")
    reason = parsed.get("reason")
    if not isinstance(reason, str) or not reason.strip():
        raise MissingReason("judge verdict lacks a non-empty reason")
    return JudgeVerdict(score=score, reason=reason.strip())


STRICT_REASK = (
    "Your previous reply was not usable. Return ONLY a bare JSON object of the form "
    '{"score": <integer 1-5>, "reason": "<non-empty string>"} with no other text.'
)


def judge_candidate(
    gold: str,
    candidate: str,
    judge_model: str,
    gateway: ModelGateway,
    *,
    question: str | None = None,
    include_question: bool = False,
    decoding: Mapping[str, Any] | None = None,
) -> JudgeVerdict:
    """One judging call with a single conservative strict-JSON re-ask."""
    request = build_eval_prompt(
        gold,
        candidate,
        model_id=judge_model,
        question=question,
        include_question=include_question,
        decoding=decoding,
    )
    response = gateway.complete(request)
    try:
        return parse_judge_output(response.text)
    except (NotJson, ScoreOutOfRange, MissingReason) as exc:
        first_error = exc
    messages = list(request.messages)
    messages.append(assistant(response.text or "(empty reply)"))
    messages.append(user(STRICT_REASK))
    retry = gateway.complete(
        ModelRequest(model_id=judge_model, messages=tuple(messages), decoding=request.decoding)
    )
    try:
        return parse_judge_output(retry.text)
    except (NotJson, ScoreOutOfRange, MissingReason) as exc:
        raise JudgeExhausted(
            f"judge output unusable after strict re-ask: {exc} (first error: {first_error})"
        ) from exc


def evaluate_run(
    pairs: Sequence[QAPair],
    candidates: Mapping[str, CandidateAnswer],
    solver_id: str,
    judge_model: str,
    gateway: ModelGateway,
    *,
    snapshot_id: str,
    include_question: bool = False,
    decoding: Mapping[str, Any] | None = None,
    max_workers: int = 4,
) -> tuple[list[EvaluationRecord], list[dict]]:
    """One verdict per retained pair; judge failures are recorded, not fatal.

    Refusals are judged like any other candidate; an empty refusal text is
    judged as the literal marker so the rubric can score it.
    """
    for pair in pairs:
        if pair.qa_id not in candidates:
            raise MissingCandidate(f"no candidate answer for {pair.qa_id!r} from {solver_id!r}")

    def _one(pair: QAPair) -> tuple[EvaluationRecord | None, dict | None]:
        answer = candidates[pair.qa_id]
        candidate_text = answer.text if answer.text else "(the solver refused to answer)"
        try:
            verdict = judge_candidate(
                pair.answer,
                candidate_text,
                judge_model,
                gateway,
                question=pair.question,
                include_question=include_question,
                decoding=decoding,
            )
        except JudgeExhausted as exc:
            logger.warning("judge exhausted on %s: %s", pair.qa_id, exc)
            return None, {"qa_id": pair.qa_id, "solver_id": solver_id, "error": str(exc)}
        record = EvaluationRecord(
            qa_id=pair.qa_id,
            solver_id=solver_id,
            candidate=answer.text,
            verdict=verdict,
            judge_model=judge_model,
            snapshot_id=snapshot_id,
        )
        return record, None

    records: list[EvaluationRecord] = []
    failures: list[dict] = []
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        for record, failure in pool.map(_one, sorted(pairs, key=lambda p: p.qa_id)):
            if record is not None:
                records.append(record)
            if failure is not None:
                failures.append(failure)
    records.sort(key=lambda r: r.qa_id)
    failures.sort(key=lambda f: f["qa_id"])
    return records, failures


def eval_records_path(root: Path, snapshot_id: str, solver_id: str) -> Path:
    return Path(root) / "eval" / snapshot_id / f"{solver_id}.jsonl"


def write_eval_records(path: Path, records: Sequence[EvaluationRecord]) -> None:
    """Append-only artifact: refuse to overwrite an existing non-empty file."""
    path = Path(path)
    if path.exists() and path.stat().st_size > 0:
        raise ArtifactExists(f"evaluation records already exist at {path}")
    write_jsonl(path, [record.to_dict() for record in records])


def read_eval_records(path: Path) -> list[EvaluationRecord]:
    return [EvaluationRecord.from_dict(row) for row in read_jsonl(Path(path))]


def aggregate(
    records: Sequence[EvaluationRecord],
    group_by: Sequence[str],
    *,
    subdomains: Mapping[str, str] | None = None,
) -> list[dict]:
    """Unweighted mean score and count per group; empty groups never appear.

    Grouping by subdomain needs a qa_id -> subdomain mapping because
    evaluation records do not carry one.
    """
    if not records:
        raise EmptyInput("no evaluation records to aggregate")
    fields = [f for f in GROUP_FIELDS if f in group_by]
    if set(group_by) - set(GROUP_FIELDS):
        raise ValueError(f"group_by entries must be among {GROUP_FIELDS}")
    if "subdomain" in fields and subdomains is None:
        raise ValueError("grouping by subdomain requires a qa_id -> subdomain mapping")

    def key_of(record: EvaluationRecord) -> tuple:
        parts = []
        for field_name in fields:
            if field_name == "solver":
                parts.append(record.solver_id)
            elif field_name == "snapshot":
                parts.append(record.snapshot_id)
            else:
                parts.append(subdomains.get(record.qa_id, "unknown"))  # type: ignore[union-attr]
        return tuple(parts)

    sums: dict[tuple, int] = {}
    counts: dict[tuple, int] = {}
    for record in records:
        key = key_of(record)
        sums[key] = sums.get(key, 0) + record.verdict.score
        counts[key] = counts.get(key, 0) + 1
    rows = []
    for key in sorted(sums):
        row = {field_name: value for field_name, value in zip(fields, key)}
        row["mean_score"] = sums[key] / counts[key]
        row["count"] = counts[key]
        rows.append(row)
    return rows


def aggregate_csv(rows: Sequence[Mapping[str, Any]], group_by: Sequence[str]) -> str:
    fields = [f for f in GROUP_FIELDS if f in group_by]
    lines = ["group,mean,count"]
    for row in rows:
        group = "/".join(str(row[f]) for f in fields) or "all"
        lines.append(f"{group},{row['mean_score']},{row['count']}")
    return "\n".join(lines) + "\n"


def score_matrix(
    records: Sequence[EvaluationRecord], subdomains: Mapping[str, str]
) -> dict[str, Any]:
    """Solver x subdomain mean-score matrix for reports and plot data."""
    rows = aggregate(records, ("solver", "subdomain"), subdomains=subdomains)
    solvers = sorted({row["solver"] for row in rows})
    domains = sorted({row["subdomain"] for row in rows})
    means: dict[tuple[str, str], float] = {
        (row["solver"], row["subdomain"]): row["mean_score"] for row in rows
    }
    matrix = [
        [means.get((solver, domain)) for domain in domains] for solver in solvers
    ]
    return {"solvers": solvers, "subdomains": domains, "mean_scores": matrix}


def render_matrix_markdown(matrix: Mapping[str, Any]) -> str:
    domains = matrix["subdomains"]
    header = "| solver | " + " | ".join(domains) + " |"
    separator = "|---" * (len(domains) + 1) + "|"
    lines = [header, separator]
    for solver, row in zip(matrix["solvers"], matrix["mean_scores"]):
        cells = [f"{value:.2f}" if value is not None else "-" for value in row]
        lines.append(f"| {solver} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
