"""Candidate-answer producers: base model, single-shot retrieval, iterative
reason-act agent, and the five-role staged workflow.

All four share one tool, the date-restricted literature search, and all
return a CandidateAnswer whose trace is sufficient to replay every search
(queries and returned doc ids are recorded).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import DbenchError
from .extraction import QAPair
from .gateway import ModelGateway, ModelRequest, assistant, system, user
from .ioutil import atomic_write_text, canonical_dumps
from .search import LocalSearchIndex, format_documents, literature_search

logger = logging.getLogger(__name__)

SOLVER_KINDS = ("base", "rag", "react", "workflow")

DEFAULT_MAX_STEPS = 8
DEFAULT_MAX_RESULTS = 5
MAX_SUBPROBLEMS = 5


@dataclass(frozen=True)
class SolverConfig:
    solver_id: str
    kind: str
    backbone: str
    cutoff_date: date
    thinking: bool = False
    max_steps: int = DEFAULT_MAX_STEPS
    max_results: int = DEFAULT_MAX_RESULTS

    def __post_init__(self) -> None:
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.max_steps < 1 or self.max_results < 1:
            raise ValueError("max_steps and max_results must be >= 1")


@dataclass
class AgentStep:
    thought: str
    action: dict | None = None  # {"tool": "search", "query": str, "doc_ids": [...]}
    observation: str | None = None

    def to_dict(self) -> dict:
        return {"thought": self.thought, "action": self.action, "observation": self.observation}


@dataclass
class AgentTrace:
    steps: list[AgentStep] = field(default_factory=list)
    terminated_by: str = "final_answer"  # or "step_limit"

    def to_dict(self) -> dict:
        return {
            "steps": [step.to_dict() for step in self.steps],
            "terminated_by": self.terminated_by,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "AgentTrace":
        return cls(
            steps=[
                AgentStep(
                    thought=step["thought"],
                    action=step.get("action"),
                    observation=step.get("observation"),
                )
                for step in payload.get("steps", [])
            ],
            terminated_by=payload.get("terminated_by", "final_answer"),
        )


@dataclass
class CandidateAnswer:
    qa_id: str
    solver_id: str
    text: str
    model_calls: int
    trace: AgentTrace | None = None
    refusal: bool = False

    def __post_init__(self) -> None:
        if not self.text and not self.refusal:
            raise ValueError("empty answer text requires the refusal marker")

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "solver_id": self.solver_id,
            "text": self.text,
            "model_calls": self.model_calls,
            "trace": self.trace.to_dict() if self.trace else None,
            "refusal": self.refusal,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "CandidateAnswer":
        trace = payload.get("trace")
        return cls(
            qa_id=payload["qa_id"],
            solver_id=payload["solver_id"],
            text=payload["text"],
            model_calls=payload["model_calls"],
            trace=AgentTrace.from_dict(trace) if trace else None,
            refusal=payload.get("refusal", False),
        )


_REFUSAL_PATTERNS = (
    r"^sorry\b",
    r"\bi haven't learned\b",
    r"\bi have not learned\b",
    r"\bi cannot answer\b",
    r"\bi can't answer\b",
    r"\bunable to answer\b",
    r"\bi do not know the answer\b",
)


def looks_like_refusal(text: str) -> bool:
    """Refusals are legitimate solver outputs; they are marked, stored, and judged."""
    stripped = text.strip().lower()
    if not stripped:
        return True
    return any(re.search(pattern, stripped) for pattern in _REFUSAL_PATTERNS)


def _answer(
    config: SolverConfig,
    qa_id: str,
    text: str,
    model_calls: int,
    trace: AgentTrace | None = None,
) -> CandidateAnswer:
    return CandidateAnswer(
        qa_id=qa_id,
        solver_id=config.solver_id,
        text=text,
        model_calls=model_calls,
        trace=trace,
        refusal=looks_like_refusal(text),
    )


def _failure_answer(config: SolverConfig, qa_id: str, error: DbenchError) -> CandidateAnswer:
    trace = AgentTrace(
        steps=[AgentStep(thought=f"solver failure: {error}")], terminated_by="final_answer"
    )
    return CandidateAnswer(
        qa_id=qa_id,
        solver_id=config.solver_id,
        text="",
        model_calls=0,
        trace=trace,
        refusal=True,
    )


def run_base(
    config: SolverConfig, qa_id: str, question: str, gateway: ModelGateway
) -> CandidateAnswer:
    """One gateway call: the question as the sole user message."""
    try:
        response = gateway.complete(
            ModelRequest(
                model_id=config.backbone, messages=(user(question),), thinking=config.thinking
            )
        )
    except DbenchError as exc:
        logger.warning("base solver failed on %s: %s", qa_id, exc)
        return _failure_answer(config, qa_id, exc)
    return _answer(config, qa_id, response.text, model_calls=1)


RAG_CONTEXT_HEADER = "# Retrieved Literature"
RAG_EMPTY_NOTE = "No documents were retrieved for this question."


def run_rag(
    config: SolverConfig,
    qa_id: str,
    question: str,
    gateway: ModelGateway,
    index: LocalSearchIndex | None,
) -> CandidateAnswer:
    """Exactly one search with the question as query, then one answer call."""
    documents = literature_search(
        index, question, cutoff_date=config.cutoff_date, max_results=config.max_results
    )
    observation = format_documents(documents)
    step = AgentStep(
        thought="single-shot retrieval with the question as the query",
        action={
            "tool": "search",
            "query": question,
            "doc_ids": [doc.doc_id for doc in documents],
        },
        observation=observation,
    )
    trace = AgentTrace(steps=[step], terminated_by="final_answer")
    if documents:
        context = f"{RAG_CONTEXT_HEADER}\n{observation}"
    else:
        context = f"{RAG_CONTEXT_HEADER}\n{RAG_EMPTY_NOTE}"
        trace.steps.append(AgentStep(thought="empty retrieval; answering from the model alone"))
    prompt = f"{context}\n\n# Question\n{question}\n\nAnswer with numbered bullet points."
    try:
        response = gateway.complete(
            ModelRequest(
                model_id=config.backbone, messages=(user(prompt),), thinking=config.thinking
            )
        )
    except DbenchError as exc:
        logger.warning("rag solver failed on %s: %s", qa_id, exc)
        return _failure_answer(config, qa_id, exc)
    return _answer(config, qa_id, response.text, model_calls=1, trace=trace)


REACT_SYSTEM_PROMPT = """You are a biomedical research assistant answering a scientific question.
Work in steps. Each reply must take exactly one of these two forms:

Thought: <your reasoning about what to do next>
Action: search[<query for the literature search tool>]

or

Thought: <your reasoning>
Final Answer: <numbered bullet points answering the question>

After each Action you will receive an Observation with search results.
Use at most one Action per reply and never invent observations yourself.
"""

_FINAL_RE = re.compile(r"Final Answer\s*:\s*(.+)\Z", re.IGNORECASE | re.DOTALL)
_ACTION_RE = re.compile(r"Action\s*:\s*search\[(.*?)\]", re.IGNORECASE | re.DOTALL)
_THOUGHT_RE = re.compile(
    r"Thought\s*:\s*(.*?)(?:\n\s*(?:Action|Final Answer)\s*:|\Z)", re.IGNORECASE | re.DOTALL
)


def _parse_react_reply(text: str) -> tuple[str, str | None, str | None]:
    """(thought, query, final) with query/final mutually exclusive, both None if unparseable."""
    thought_match = _THOUGHT_RE.search(text)
    thought = thought_match.group(1).strip() if thought_match else text.strip()
    final_match = _FINAL_RE.search(text)
    if final_match:
        return thought, None, final_match.group(1).strip()
    action_match = _ACTION_RE.search(text)
    if action_match:
        return thought, action_match.group(1).strip(), None
    return thought, None, None


def run_react(
    config: SolverConfig,
    qa_id: str,
    question: str,
    gateway: ModelGateway,
    index: LocalSearchIndex | None,
) -> CandidateAnswer:
    """Thought/action/observation loop, bounded by max_steps.

    Every model call consumes one step slot, including the corrective
    reprompt after an unparseable reply, which keeps the total model-call
    budget at max_steps plus the one forced-answer call on step-limit.
    """
    messages = [system(REACT_SYSTEM_PROMPT), user(question)]
    trace = AgentTrace()
    model_calls = 0
    final_text: str | None = None
    while len(trace.steps) < config.max_steps:
        try:
            response = gateway.complete(
                ModelRequest(
                    model_id=config.backbone, messages=tuple(messages), thinking=config.thinking
                )
            )
        except DbenchError as exc:
            logger.warning("react solver failed on %s: %s", qa_id, exc)
            return _failure_answer(config, qa_id, exc)
        model_calls += 1
        thought, query, final = _parse_react_reply(response.text)
        if final is not None:
            trace.steps.append(AgentStep(thought=thought))
            final_text = final
            break
        if query is not None:
            documents = literature_search(
                index, query, cutoff_date=config.cutoff_date, max_results=config.max_results
            )
            observation = format_documents(documents)
            trace.steps.append(
                AgentStep(
                    thought=thought,
                    action={
                        "tool": "search",
                        "query": query,
                        "doc_ids": [doc.doc_id for doc in documents],
                    },
                    observation=observation,
                )
            )
            messages.append(assistant(response.text))
            messages.append(user(f"Observation:\n{observation}"))
            continue
        # Unparseable reply: keep it as a thought-only step and reprompt once;
        # the reprompt is the next loop iteration and consumes the next slot.
        trace.steps.append(AgentStep(thought=thought or "(unparseable reply)"))
        messages.append(assistant(response.text or "(empty reply)"))
        messages.append(
            user("Reply with exactly one Action: search[...] or a Final Answer, as instructed.")
        )
    if final_text is None:
        trace.terminated_by = "step_limit"
        messages.append(
            user("You have reached the step limit. Give your Final Answer now, nothing else.")
        )
        try:
            response = gateway.complete(
                ModelRequest(
                    model_id=config.backbone, messages=tuple(messages), thinking=config.thinking
                )
            )
        except DbenchError as exc:
            logger.warning("react forced answer failed on %s: %s", qa_id, exc)
            return _failure_answer(config, qa_id, exc)
        model_calls += 1
        _, _, final = _parse_react_reply(response.text)
        final_text = final if final is not None else response.text.strip()
    else:
        trace.terminated_by = "final_answer"
    return _answer(config, qa_id, final_text, model_calls=model_calls, trace=trace)


WORKFLOW_STAGE_PROMPTS = {
    "planner": (
        "You are the Planner in a five-role research workflow. Read the question and "
        "decompose it into the smallest set of sub-problems whose answers settle it. "
        f"Output at most {MAX_SUBPROBLEMS} sub-problems as numbered lines, nothing else."
    ),
    "tool_caller": (
        "You are the Tool Caller in a five-role research workflow. For each numbered "
        "sub-problem, output one literature search query as a numbered line, in the "
        "same order, nothing else."
    ),
    "reasoner": (
        "You are the Reasoner in a five-role research workflow. Synthesize the search "
        "observations into the key evidence relevant to the question. Be concise and "
        "cite doc ids in brackets."
    ),
    "reporter": (
        "You are the Reporter in a five-role research workflow. Using the synthesis, "
        "write the final answer to the question as numbered bullet points."
    ),
    "critic": (
        "You are the Critic in a five-role research workflow. Review the draft answer. "
        "Reply APPROVE if it adequately answers the question; otherwise reply "
        "REVISE: <what must change>."
    ),
}

_REVISE_RE = re.compile(r"\bREVISE\b")
_APPROVE_RE = re.compile(r"\bAPPROVE\b")


def solver_prompt_hashes() -> dict[str, str]:
    """Digest per agent stage prompt, recorded in snapshot manifests."""
    templates = {"react_system": REACT_SYSTEM_PROMPT}
    templates.update(
        {f"workflow_{stage}": text for stage, text in WORKFLOW_STAGE_PROMPTS.items()}
    )
    return {
        name: hashlib.sha256(text.encode("utf-8")).hexdigest()
        for name, text in templates.items()
    }


def _stage_call(
    gateway: ModelGateway, config: SolverConfig, stage: str, content: str
) -> str:
    response = gateway.complete(
        ModelRequest(
            model_id=config.backbone,
            messages=(system(WORKFLOW_STAGE_PROMPTS[stage]), user(content)),
            thinking=config.thinking,
        )
    )
    return response.text


def _numbered_items(text: str) -> list[str]:
    items = []
    for line in text.splitlines():
        match = re.match(r"\s*\d+\.\s*(.+)$", line)
        if match:
            items.append(match.group(1).strip())
    return items


def run_workflow(
    config: SolverConfig,
    qa_id: str,
    question: str,
    gateway: ModelGateway,
    index: LocalSearchIndex | None,
) -> CandidateAnswer:
    """Planner -> Tool Caller -> Reasoner -> Reporter -> Critic, one call each.

    The Tool Caller performs exactly one search per sub-problem. The Critic
    either approves the draft (five calls total) or requests one revision,
    after which the Reporter revises once (six calls).
    """
    trace = AgentTrace(terminated_by="final_answer")
    model_calls = 0
    try:
        plan_text = _stage_call(gateway, config, "planner", question)
        model_calls += 1
        subproblems = _numbered_items(plan_text)[:MAX_SUBPROBLEMS]
        if not subproblems:
            # One corrective reprompt, then fall through with the raw text as a
            # single sub-problem.
            plan_text = _stage_call(
                gateway,
                config,
                "planner",
                f"{question}\n\nYour previous plan had no numbered lines. "
                "Output the sub-problems as numbered lines only.",
            )
            model_calls += 1
            subproblems = _numbered_items(plan_text)[:MAX_SUBPROBLEMS]
        if not subproblems:
            subproblems = [question]
        trace.steps.append(AgentStep(thought=f"Planner: {plan_text.strip()}"))

        numbered = "\n".join(f"{i}. {sub}" for i, sub in enumerate(subproblems, start=1))
        queries_text = _stage_call(
            gateway, config, "tool_caller", f"# Question\n{question}\n\n# Sub-problems\n{numbered}"
        )
        model_calls += 1
        queries = _numbered_items(queries_text)
        observations: list[str] = []
        for i, subproblem in enumerate(subproblems):
            query = queries[i] if i < len(queries) else subproblem
            documents = literature_search(
                index, query, cutoff_date=config.cutoff_date, max_results=config.max_results
            )
            observation = format_documents(documents)
            observations.append(observation)
            trace.steps.append(
                AgentStep(
                    thought=f"Tool Caller: search for sub-problem {i + 1}",
                    action={
                        "tool": "search",
                        "query": query,
                        "doc_ids": [doc.doc_id for doc in documents],
                    },
                    observation=observation,
                )
            )

        observations_block = "\n\n".join(
            f"## Observation {i + 1}\n{obs}" for i, obs in enumerate(observations)
        )
        synthesis = _stage_call(
            gateway,
            config,
            "reasoner",
            f"# Question\n{question}\n\n# Observations\n{observations_block}",
        )
        model_calls += 1
        trace.steps.append(AgentStep(thought=f"Reasoner: {synthesis.strip()}"))

        draft = _stage_call(
            gateway, config, "reporter", f"# Question\n{question}\n\n# Synthesis\n{synthesis}"
        )
        model_calls += 1
        trace.steps.append(AgentStep(thought=f"Reporter: {draft.strip()}"))

        critique = _stage_call(
            gateway, config, "critic", f"# Question\n{question}\n\n# Draft Answer\n{draft}"
        )
        model_calls += 1
        trace.steps.append(AgentStep(thought=f"Critic: {critique.strip()}"))

        answer_text = draft
        if _REVISE_RE.search(critique) and not _APPROVE_RE.search(critique):
            revised = _stage_call(
                gateway,
                config,
                "reporter",
                f"# Question\n{question}\n\n# Draft Answer\n{draft}\n\n"
                f"# Revision Request\n{critique}",
            )
            model_calls += 1
            trace.steps.append(AgentStep(thought=f"Reporter (revision): {revised.strip()}"))
            answer_text = revised
    except DbenchError as exc:
        logger.warning("workflow solver failed on %s: %s", qa_id, exc)
        return _failure_answer(config, qa_id, exc)
    return _answer(config, qa_id, answer_text, model_calls=model_calls, trace=trace)


def run_solver(
    config: SolverConfig,
    qa_id: str,
    question: str,
    gateway: ModelGateway,
    index: LocalSearchIndex | None = None,
) -> CandidateAnswer:
    if config.kind == "base":
        return run_base(config, qa_id, question, gateway)
    if config.kind == "rag":
        return run_rag(config, qa_id, question, gateway, index)
    if config.kind == "react":
        return run_react(config, qa_id, question, gateway, index)
    return run_workflow(config, qa_id, question, gateway, index)


def _run_filename(qa_id: str) -> str:
    return qa_id.replace("/", "_") + ".json"


def write_candidate(runs_root: Path, snapshot_id: str, answer: CandidateAnswer) -> Path:
    path = Path(runs_root) / "runs" / snapshot_id / answer.solver_id / _run_filename(answer.qa_id)
    atomic_write_text(path, canonical_dumps(answer.to_dict()) + "\n")
    return path


def load_candidates(runs_root: Path, snapshot_id: str, solver_id: str) -> dict[str, CandidateAnswer]:
    directory = Path(runs_root) / "runs" / snapshot_id / solver_id
    candidates: dict[str, CandidateAnswer] = {}
    if not directory.is_dir():
        return candidates
    for path in sorted(directory.glob("*.json")):
        answer = CandidateAnswer.from_dict(json.loads(path.read_text(encoding="utf-8")))
        candidates[answer.qa_id] = answer
    return candidates


def solve_benchmark(
    pairs: Sequence[QAPair],
    config: SolverConfig,
    gateway: ModelGateway,
    index: LocalSearchIndex | None,
    *,
    runs_root: Path,
    snapshot_id: str,
) -> list[CandidateAnswer]:
    answers = []
    for pair in sorted(pairs, key=lambda p: p.qa_id):
        answer = run_solver(config, pair.qa_id, pair.question, gateway, index)
        write_candidate(runs_root, snapshot_id, answer)
        answers.append(answer)
    return answers
