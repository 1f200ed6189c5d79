"""QA extraction: one hypothesis-question / discovery-answer pair per abstract."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .corpus import AbstractRecord
from .errors import DbenchError, ExtractionExhausted, NotJson, SchemaViolation
from .gateway import ModelGateway, ModelRequest, assistant, user
from .prompts import render_extraction_prompt

logger = logging.getLogger(__name__)

QA_ID_SUFFIX = "#qa"


@dataclass(frozen=True)
class QAPair:
    """One question/answer pair distilled from exactly one abstract."""

    qa_id: str
    abstract_id: str
    question: str
    answer: str
    subdomain: str
    snapshot_id: str

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "abstract_id": self.abstract_id,
            "question": self.question,
            "answer": self.answer,
            "subdomain": self.subdomain,
            "snapshot_id": self.snapshot_id,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "QAPair":
        return cls(
            qa_id=payload["qa_id"],
            abstract_id=payload["abstract_id"],
            question=payload["question"],
            answer=payload["answer"],
            subdomain=payload["subdomain"],
            snapshot_id=payload["snapshot_id"],
        )


def qa_id_for(abstract_id: str) -> str:
    return abstract_id + QA_ID_SUFFIX


def build_extraction_prompt(
    record: AbstractRecord, *, model_id: str, decoding: Mapping[str, Any] | None = None
) -> ModelRequest:
    """Single user message: the extraction template with the abstract substituted."""
    if not record.abstract_text:
        raise ValueError("record has an empty abstract")
    prompt = render_extraction_prompt(record.abstract_text)
    return ModelRequest(
        model_id=model_id, messages=(user(prompt),), decoding=dict(decoding or {})
    )


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",\s*([}\]])")
_BULLET_RE = re.compile(r"^(\d+)\.\s+\S")


def _extract_json_object(text: str) -> dict:
    candidate = text
    fenced = _FENCE_RE.search(text)
    if fenced:
        candidate = fenced.group(1)
    start = candidate.find("{")
    end = candidate.rfind("}")
    if start == -1 or end == -1 or end <= start:
        raise NotJson("no JSON object found in output")
    candidate = candidate[start : end + 1]
    try:
        parsed = json.loads(candidate)
    except ValueError:
        try:
            parsed = json.loads(_TRAILING_COMMA_RE.sub(r"\1", candidate))
        except ValueError as exc:
            raise NotJson(f"output is not valid JSON: {exc}") from exc
    if not isinstance(parsed, dict):
        raise NotJson("top-level JSON value is not an object")
    return parsed


def validate_answer_shape(answer: str) -> None:
    """Answers are consecutively numbered bullet lines starting at 1."""
    lines = [line.strip() for line in answer.strip().splitlines() if line.strip()]
    if not lines:
        raise SchemaViolation("answer is empty")
    for expected, line in enumerate(lines, start=1):
        match = _BULLET_RE.match(line)
        if not match:
            raise SchemaViolation(f"answer line {expected} is not a numbered bullet: {line!r}")
        if int(match.group(1)) != expected:
            raise SchemaViolation(
                f"answer bullets are not consecutively numbered at line {expected}"
            )


def parse_extraction_output(text: str) -> dict[str, str]:
    """Extract and validate {question, answer} from raw model output.

    Tolerates surrounding code fences, prose around the object, and trailing
    commas inside it. Never raises anything but NotJson/SchemaViolation.
    """
    if not isinstance(text, str):
        raise NotJson("output is not text")
    parsed = _extract_json_object(text)
    question = parsed.get("question")
    answer = parsed.get("answer")
    if not isinstance(question, str) or not question.strip():
        raise SchemaViolation("missing or empty question")
    if not isinstance(answer, str) or not answer.strip():
        raise SchemaViolation("missing or empty answer")
    question = question.strip()
    answer = answer.strip()
    if not question.endswith("?"):
        raise SchemaViolation("question does not end with '?'")
    validate_answer_shape(answer)
    return {"question": question, "answer": answer}


@dataclass
class ExtractionFailure:
    abstract_id: str
    attempts: int
    last_error: str
    last_output: str

    def to_dict(self) -> dict:
        return {
            "abstract_id": self.abstract_id,
            "attempts": self.attempts,
            "last_error": self.last_error,
            "last_output": self.last_output,
        }


def extract_qa(
    record: AbstractRecord,
    extractor_model: str,
    gateway: ModelGateway,
    *,
    snapshot_id: str,
    max_corrective_retries: int = 2,
    decoding: Mapping[str, Any] | None = None,
) -> QAPair:
    """Build the prompt, call the model, parse; re-ask on parse failure.

    Each corrective turn appends the parse error so the model can repair its
    own output. After 1 + max_corrective_retries attempts the extraction is
    abandoned with ExtractionExhausted.
    """
    request = build_extraction_prompt(record, model_id=extractor_model, decoding=decoding)
    messages = list(request.messages)
    attempts = 0
    last_error = ""
    last_output = ""
    while attempts < 1 + max_corrective_retries:
        attempts += 1
        response = gateway.complete(
            ModelRequest(
                model_id=extractor_model,
                messages=tuple(messages),
                decoding=request.decoding,
            )
        )
        last_output = response.text
        try:
            parsed = parse_extraction_output(response.text)
        except (NotJson, SchemaViolation) as exc:
            last_error = str(exc)
            messages.append(assistant(response.text or "(empty reply)"))
            messages.append(
                user(
                    f"Your previous reply could not be used: {last_error}. "
                    "Return ONLY the JSON object matching the Output JSON Schema."
                )
            )
            continue
        return QAPair(
            qa_id=qa_id_for(record.abstract_id),
            abstract_id=record.abstract_id,
            question=parsed["question"],
            answer=parsed["answer"],
            subdomain=record.subdomain,
            snapshot_id=snapshot_id,
        )
    error = ExtractionExhausted(
        f"extraction failed for {record.abstract_id!r} after {attempts} attempts: {last_error}"
    )
    error.attempts = attempts  # type: ignore[attr-defined]
    error.last_error = last_error  # type: ignore[attr-defined]
    error.last_output = last_output  # type: ignore[attr-defined]
    raise error


def extract_snapshot(
    records: Sequence[AbstractRecord],
    extractor_model: str,
    gateway: ModelGateway,
    *,
    snapshot_id: str,
    max_corrective_retries: int = 2,
    decoding: Mapping[str, Any] | None = None,
    max_workers: int = 4,
) -> tuple[list[QAPair], list[ExtractionFailure]]:
    """Extract every record, in parallel, merging results in abstract-id order."""

    def _one(record: AbstractRecord) -> tuple[QAPair | None, ExtractionFailure | None]:
        try:
            pair = extract_qa(
                record,
                extractor_model,
                gateway,
                snapshot_id=snapshot_id,
                max_corrective_retries=max_corrective_retries,
                decoding=decoding,
            )
            return pair, None
        except ExtractionExhausted as exc:
            return None, ExtractionFailure(
                abstract_id=record.abstract_id,
                attempts=getattr(exc, "attempts", 1 + max_corrective_retries),
                last_error=getattr(exc, "last_error", str(exc)),
                last_output=getattr(exc, "last_output", ""),
            )
        except DbenchError as exc:
            logger.warning("extraction aborted for %s: %s", record.abstract_id, exc)
            return None, ExtractionFailure(
                abstract_id=record.abstract_id, attempts=0, last_error=str(exc), last_output=""
            )

    pairs: list[QAPair] = []
    failures: list[ExtractionFailure] = []
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        for pair, failure in pool.map(_one, records):
            if pair is not None:
                pairs.append(pair)
            if failure is not None:
                failures.append(failure)
    pairs.sort(key=lambda p: p.abstract_id)
    failures.sort(key=lambda f: f.abstract_id)
    return pairs, failures
