"""Uniform chat-completion interface for every pipeline stage.

All model traffic flows through :class:`ModelGateway`, which owns the three
concerns no stage should re-implement:

* a registry mapping model ids to providers (remote HTTP APIs, deterministic
  offline stand-ins, scripted mocks),
* permit-based rate limiting plus bounded retries with exponential backoff on
  transient transport failures,
* an optional content-addressed response cache so any run can be replayed
  byte-for-byte offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Protocol, Sequence

import requests

from .errors import (
    AmbiguousMatcher,
    ProviderRefusal,
    TransientTransportError,
    TransportExhausted,
    UnknownModel,
    UnmatchedRequest,
)
from .ioutil import atomic_write_text, canonical_dumps

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass(frozen=True)
class ModelRequest:
    """One chat-completion call; decoding holds named parameters (temperature, ...).

    An empty decoding map means the provider's defaults apply.
    """

    model_id: str
    messages: tuple[ChatMessage, ...]
    thinking: bool = False
    decoding: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "decoding", dict(self.decoding))
        if not self.messages:
            raise ValueError("a request needs at least one message")

    def last_user_content(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return self.messages[-1].content


@dataclass(frozen=True)
class ModelResponse:
    text: str
    reasoning_trace: str | None = None
    usage: Mapping[str, int] = field(default_factory=dict)
    latency_s: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "usage", dict(self.usage))
        for name, count in self.usage.items():
            if count < 0:
                raise ValueError(f"negative usage count for {name!r}")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "reasoning_trace": self.reasoning_trace,
            "usage": dict(self.usage),
            "latency_s": self.latency_s,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ModelResponse":
        return cls(
            text=payload["text"],
            reasoning_trace=payload.get("reasoning_trace"),
            usage=payload.get("usage", {}),
            latency_s=payload.get("latency_s", 0.0),
        )


def cache_key(request: ModelRequest) -> str:
    """Stable content digest over model id, messages, thinking flag, and decoding map.

    Decoding keys are sorted and message content is normalized only at the
    trailing-newline boundary; interior whitespace is format-sensitive and
    must survive untouched.
    """
    payload = {
        "model_id": request.model_id,
        "thinking": request.thinking,
        "messages": [
            {"role": m.role, "content": m.content.rstrip("\n")} for m in request.messages
        ],
        "decoding": {str(k): request.decoding[k] for k in sorted(request.decoding, key=str)},
    }
    return hashlib.sha256(canonical_dumps(payload).encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed record-replay cache: one JSON file per request digest."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> ModelResponse | None:
        path = self._path(key)
        if not path.exists():
            return None
        return ModelResponse.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def put(self, key: str, response: ModelResponse) -> None:
        atomic_write_text(self._path(key), canonical_dumps(response.to_dict()))


class PermitLimiter:
    """Bounds the number of concurrently in-flight provider calls."""

    def __init__(self, permits: int):
        if permits < 1:
            raise ValueError("permits must be >= 1")
        self.max_permits = permits
        self._semaphore = threading.BoundedSemaphore(permits)
        self._lock = threading.Lock()
        self._in_flight = 0
        self._peak = 0

    @contextmanager
    def permit(self) -> Iterator[None]:
        with self._semaphore:
            with self._lock:
                self._in_flight += 1
                self._peak = max(self._peak, self._in_flight)
            try:
                yield
            finally:
                with self._lock:
                    self._in_flight -= 1

    @property
    def peak_in_flight(self) -> int:
        with self._lock:
            return self._peak


class Provider(Protocol):
    def invoke(self, request: ModelRequest) -> ModelResponse: ...


def _word_usage(request: ModelRequest, text: str) -> dict[str, int]:
    prompt_words = sum(len(m.content.split()) for m in request.messages)
    return {"input_tokens": prompt_words, "output_tokens": len(text.split())}


def _offline_response(
    request: ModelRequest, text: str, reasoning: str | None = None
) -> ModelResponse:
    return ModelResponse(
        text=text, reasoning_trace=reasoning, usage=_word_usage(request, text), latency_s=0.0
    )


class EchoProvider:
    """Returns the last user message verbatim. Useful as a transparent backbone."""

    def invoke(self, request: ModelRequest) -> ModelResponse:
        return _offline_response(request, request.last_user_content())


class ScriptedProvider:
    """Substring-matcher script: the first message containing a matcher selects its reply.

    Exactly one matcher may claim a request; more than one raises
    AmbiguousMatcher, none falls back to the default reply when configured.
    """

    def __init__(self, script: Mapping[str, str], default: str | None = None):
        self.script = dict(script)
        self.default = default

    def invoke(self, request: ModelRequest) -> ModelResponse:
        joined = "\n".join(m.content for m in request.messages)
        hits = [matcher for matcher in self.script if matcher in joined]
        if len(hits) > 1:
            raise AmbiguousMatcher(f"matchers {sorted(hits)!r} all claim one request")
        if hits:
            return _offline_response(request, self.script[hits[0]])
        if self.default is not None:
            return _offline_response(request, self.default)
        raise UnmatchedRequest("no script matcher claims this request and no default is set")


def _hexdigest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _hash_int(text: str) -> int:
    return int(_hexdigest(text)[:12], 16)


def _stub_table_ids(joined: str) -> list[str]:
    """Pull item ids out of the input table appended after a judge prompt."""
    ids: list[str] = []
    for line in joined.splitlines():
        stripped = line.strip()
        if not (stripped.startswith("|") and stripped.count("|") >= 2):
            continue
        cells = [cell.strip() for cell in stripped.strip("|").split("|")]
        if not cells or cells[0].lower() in {"id", ""}:
            continue
        if cells[0].startswith("<") or set(cells[0]) <= set(":- "):
            continue
        ids.append(cells[0])
    return ids


def _numbered_lines(text: str) -> list[str]:
    lines = []
    for line in text.splitlines():
        match = re.match(r"\s*\d+\.\s*(.+)$", line)
        if match:
            lines.append(match.group(1).strip())
    return lines


class DeterministicStubProvider:
    """Offline stand-in that recognizes the pipeline's own prompt formats.

    Every reply is a pure function of the request content, so full pipeline
    runs through this provider are reproducible byte-for-byte. Shapes are
    always schema-valid: QA extraction gets JSON, score judges get markdown
    tables over exactly the requested ids, agents get parseable steps.
    """

    def invoke(self, request: ModelRequest) -> ModelResponse:
        joined = "\n\n".join(m.content for m in request.messages)
        text = self._reply(request, joined)
        reasoning = None
        if request.thinking:
            reasoning = f"stub deliberation {_hexdigest(joined)[:8]}"
        return _offline_response(request, text, reasoning)

    def _reply(self, request: ModelRequest, joined: str) -> str:
        if "# Output JSON Schema" in joined and "## Input" in joined:
            return self._extraction_reply(request)
        if "| id | score |" in joined:
            return self._score_table_reply(joined)
        if "# Scoring Criteria" in joined:
            return self._verdict_reply(joined)
        if "You are the Planner" in joined:
            return self._planner_reply(request)
        if "You are the Tool Caller" in joined:
            return self._tool_caller_reply(request)
        if "You are the Reasoner" in joined:
            return f"The retrieved observations converge on one mechanism (trace {_hexdigest(joined)[:6]})."
        if "You are the Reporter" in joined:
            return self._reporter_reply(request, joined)
        if "You are the Critic" in joined:
            return self._critic_reply(joined)
        if "Action: search[" in joined:
            return self._react_reply(request, joined)
        return self._base_reply(joined)

    def _extraction_reply(self, request: ModelRequest) -> str:
        seed = _hexdigest(request.last_user_content())[:6]
        payload = {
            "question": f"Does the intervention characterized in study {seed} alter its primary reported outcome?",
            "answer": (
                f"1. The intervention changes the primary outcome reported in study {seed}.\n"
                "2. The effect is attributed to the mechanism highlighted by the authors."
            ),
        }
        return json.dumps(payload)

    def _score_table_reply(self, joined: str) -> str:
        if "Field Relevance Scorer" in joined:
            salt = "relevance"
        elif "Access the clarity" in joined:
            salt = "clarity"
        else:
            salt = "centrality"
        rows = ["| id | score |", "|---|---|"]
        for item_id in _stub_table_ids(joined):
            h = _hash_int(f"{salt}:{item_id}")
            if salt == "relevance":
                score = 4 + h % 2
            elif salt == "clarity":
                score = 4 if h % 4 == 0 else 5
            else:
                score = 4 if h % 5 == 0 else 5
            rows.append(f"| {item_id} | {score} |")
        return "\n".join(rows)

    def _verdict_reply(self, joined: str) -> str:
        seed = _hexdigest(joined)
        score = 1 + _hash_int(f"verdict:{seed}") % 5
        return json.dumps(
            {"score": score, "reason": f"Deterministic stub comparison {seed[:6]}."}
        )

    def _planner_reply(self, request: ModelRequest) -> str:
        question = request.last_user_content()
        count = 1 + _hash_int(f"plan:{question}") % 3
        topic = " ".join(question.split()[:6])
        return "\n".join(
            f"{i}. Clarify aspect {i} of: {topic}" for i in range(1, count + 1)
        )

    def _tool_caller_reply(self, request: ModelRequest) -> str:
        subproblems = _numbered_lines(request.last_user_content())
        if not subproblems:
            subproblems = [request.last_user_content()]
        return "\n".join(
            f"{i}. {' '.join(sub.split()[:8])}" for i, sub in enumerate(subproblems, start=1)
        )

    def _reporter_reply(self, request: ModelRequest, joined: str) -> str:
        seed = _hexdigest(request.last_user_content())[:6]
        if "# Revision Request" in joined:
            return (
                f"1. The synthesized finding holds (draft {seed}, revised).\n"
                "2. The requested mechanistic detail is now included."
            )
        return (
            f"1. The synthesized finding holds (draft {seed}).\n"
            "2. Supporting evidence comes from the retrieved reports."
        )

    def _critic_reply(self, joined: str) -> str:
        if _hash_int(f"critic:{_hexdigest(joined)}") % 3 == 0:
            return "REVISE: add one sentence naming the mechanism explicitly."
        return "APPROVE"

    def _react_reply(self, request: ModelRequest, joined: str) -> str:
        observed = any(m.content.startswith("Observation:") for m in request.messages)
        if observed:
            seed = _hexdigest(joined)[:6]
            return (
                "Thought: The retrieved evidence is sufficient to answer.\n"
                f"Final Answer: 1. The queried relationship is supported by the retrieved reports ({seed}).\n"
                "2. The effect proceeds through the mechanism they describe."
            )
        question = request.last_user_content()
        query = " ".join(re.findall(r"[A-Za-z0-9-]+", question)[:6]) or "recent findings"
        return f"Thought: I should consult the literature first.\nAction: search[{query}]"

    def _base_reply(self, joined: str) -> str:
        seed = _hexdigest(joined)[:6]
        return (
            f"1. The proposed relationship is supported ({seed}).\n"
            "2. The effect operates through the pathway described in prior work."
        )


class HttpChatProvider:
    """OpenAI-style chat-completions client.

    Endpoint resolution: explicit spec endpoint, else the configured base-URL
    env var. Transient transport failures (connection errors, timeouts,
    429/5xx) surface as TransientTransportError so the gateway can retry;
    other HTTP errors are non-retryable refusals.
    """

    def __init__(self, spec: "ModelSpec", post: Callable[..., Any] | None = None):
        self.spec = spec
        self._post = post or requests.post

    def invoke(self, request: ModelRequest) -> ModelResponse:
        endpoint = self.spec.endpoint or os.environ.get(self.spec.api_base_env)
        if not endpoint:
            raise ProviderRefusal(
                f"model {self.spec.model_id!r} has no endpoint and ${self.spec.api_base_env} is unset"
            )
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.spec.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload: dict[str, Any] = {
            "model": self.spec.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        }
        payload.update(request.decoding)
        if request.thinking:
            payload["thinking"] = True
        started = time.perf_counter()
        try:
            raw = self._post(
                endpoint.rstrip("/") + "/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.spec.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransientTransportError(str(exc)) from exc
        latency = time.perf_counter() - started
        status = getattr(raw, "status_code", 200)
        if status == 429 or status >= 500:
            raise TransientTransportError(f"provider returned status {status}")
        if status >= 400:
            raise ProviderRefusal(f"provider returned status {status}: {raw.text[:200]}")
        try:
            body = raw.json()
            message = body["choices"][0]["message"]
            text = message["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderRefusal(f"malformed provider response: {exc}") from exc
        usage = body.get("usage", {}) or {}
        return ModelResponse(
            text=text,
            reasoning_trace=message.get("reasoning_content"),
            usage={
                "input_tokens": int(usage.get("prompt_tokens", 0)),
                "output_tokens": int(usage.get("completion_tokens", 0)),
            },
            latency_s=latency,
        )


PROVIDER_KINDS = ("echo", "stub", "scripted", "http")


@dataclass
class ModelSpec:
    """Registry entry: how to reach a model and what it is allowed to claim."""

    model_id: str
    provider: str = "stub"
    endpoint: str | None = None
    api_key_env: str = "MODEL_API_KEY"
    api_base_env: str = "MODEL_API_BASE"
    thinking_capable: bool = False
    release_date: date | None = None
    timeout_s: float = 60.0
    script: Mapping[str, str] | None = None
    default_reply: str | None = None

    def __post_init__(self) -> None:
        if self.provider not in PROVIDER_KINDS:
            raise ValueError(f"unknown provider kind {self.provider!r}")


class ModelRegistry:
    """Thread-safe id -> provider table with mock registration support."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._providers: dict[str, Provider] = {}
        self._specs: dict[str, ModelSpec] = {}
        self._mock_counter = 0

    def register(self, spec: ModelSpec) -> str:
        provider = self._build(spec)
        return self.register_provider(spec.model_id, provider, spec=spec)

    def register_provider(
        self, model_id: str, provider: Provider, spec: ModelSpec | None = None
    ) -> str:
        with self._lock:
            self._providers[model_id] = provider
            self._specs[model_id] = spec or ModelSpec(model_id=model_id)
        return model_id

    def register_mock(
        self,
        script: Mapping[str, str],
        *,
        model_id: str | None = None,
        default: str | None = None,
        thinking_capable: bool = True,
    ) -> str:
        with self._lock:
            if model_id is None:
                self._mock_counter += 1
                model_id = f"mock-{self._mock_counter}"
        spec = ModelSpec(
            model_id=model_id, provider="scripted", thinking_capable=thinking_capable
        )
        return self.register_provider(model_id, ScriptedProvider(script, default), spec=spec)

    @staticmethod
    def _build(spec: ModelSpec) -> Provider:
        if spec.provider == "echo":
            return EchoProvider()
        if spec.provider == "stub":
            return DeterministicStubProvider()
        if spec.provider == "scripted":
            return ScriptedProvider(spec.script or {}, spec.default_reply)
        return HttpChatProvider(spec)

    def resolve(self, model_id: str) -> tuple[Provider, ModelSpec]:
        with self._lock:
            if model_id not in self._providers:
                raise UnknownModel(f"model {model_id!r} is not registered")
            return self._providers[model_id], self._specs[model_id]

    def spec(self, model_id: str) -> ModelSpec:
        return self.resolve(model_id)[1]

    def release_dates(self) -> dict[str, date]:
        with self._lock:
            return {
                model_id: spec.release_date
                for model_id, spec in self._specs.items()
                if spec.release_date is not None
            }


class ModelGateway:
    """complete() with caching, rate limiting, and bounded retries.

    Safe for concurrent callers; the limiter and cache tolerate concurrent
    access. No ordering guarantee is made across callers.
    """

    def __init__(
        self,
        registry: ModelRegistry,
        *,
        cache_dir: Path | str | None = None,
        permits: int = 4,
        max_retries: int = 3,
        backoff_base_s: float = 0.5,
        backoff_cap_s: float = 30.0,
        jitter_s: float = 0.1,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.registry = registry
        self.cache = ResponseCache(Path(cache_dir)) if cache_dir is not None else None
        self.limiter = PermitLimiter(permits)
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.backoff_cap_s = backoff_cap_s
        self.jitter_s = jitter_s
        self._sleep = sleep
        self._rng = rng or random.Random()

    def complete(self, request: ModelRequest) -> ModelResponse:
        provider, _spec = self.registry.resolve(request.model_id)
        key = cache_key(request) if self.cache is not None else None
        if self.cache is not None and key is not None:
            hit = self.cache.get(key)
            if hit is not None:
                logger.debug("cache hit for %s (%s)", request.model_id, key[:12])
                return hit
        with self.limiter.permit():
            response = self._call_with_retries(provider, request)
        logger.debug(
            "model %s replied in %.3fs (%s tokens out)",
            request.model_id,
            response.latency_s,
            response.usage.get("output_tokens", 0),
        )
        if self.cache is not None and key is not None:
            self.cache.put(key, response)
        return response

    def _call_with_retries(self, provider: Provider, request: ModelRequest) -> ModelResponse:
        attempts = 1 + self.max_retries
        last_error: TransientTransportError | None = None
        for attempt in range(attempts):
            try:
                started = time.perf_counter()
                response = provider.invoke(request)
                if response.latency_s == 0.0 and not isinstance(
                    provider, (EchoProvider, ScriptedProvider, DeterministicStubProvider)
                ):
                    response = ModelResponse(
                        text=response.text,
                        reasoning_trace=response.reasoning_trace,
                        usage=response.usage,
                        latency_s=time.perf_counter() - started,
                    )
                return response
            except TransientTransportError as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    delay = min(self.backoff_base_s * (2**attempt), self.backoff_cap_s)
                    self._sleep(delay + self._rng.uniform(0, self.jitter_s))
        raise TransportExhausted(
            f"{attempts} attempts failed for model {request.model_id!r}: {last_error}"
        ) from last_error


def build_registry(specs: Sequence[ModelSpec]) -> ModelRegistry:
    registry = ModelRegistry()
    for spec in specs:
        registry.register(spec)
    return registry
