"""Shared test builders: records, local sources, and instrumented providers."""

from __future__ import annotations

import json
import threading
from datetime import date, datetime, timezone
from pathlib import Path

from dbench.corpus import AbstractRecord, AllowlistEntry, SourceSpec
from dbench.gateway import ModelRegistry, ModelRequest, ModelResponse


def make_record(
    abstract_id: str = "abs-1",
    *,
    publication_date: date = date(2025, 12, 10),
    subdomain: str = "Cell biology",
    journal: str = "Journal of Cellular Signaling",
    external_id: str | None = None,
    title: str = "A finding",
    abstract_text: str = "Something was discovered in cells.",
    retrieved_at: datetime | None = None,
    quartile: str = "Q1",
) -> AbstractRecord:
    return AbstractRecord(
        abstract_id=abstract_id,
        external_id=external_id,
        title=title,
        abstract_text=abstract_text,
        journal=journal,
        subdomain=subdomain,
        quartile=quartile,
        publication_date=publication_date,
        retrieved_at=retrieved_at or datetime(2026, 1, 2, tzinfo=timezone.utc),
    )


DEFAULT_ALLOWLIST = (
    AllowlistEntry("Journal of Cellular Signaling", "Cell biology", "Q1"),
    AllowlistEntry("Annals of Neural Circuits", "Neurosciences", "Q1"),
)


def write_source_dir(tmp_path: Path, raws: list[dict]) -> Path:
    directory = tmp_path / "abstracts"
    directory.mkdir(parents=True, exist_ok=True)
    for index, raw in enumerate(raws):
        (directory / f"rec-{index:03d}.json").write_text(json.dumps(raw), encoding="utf-8")
    return directory


def local_source(
    tmp_path: Path, raws: list[dict], *, allowlist=DEFAULT_ALLOWLIST, source_id: str = "test"
) -> SourceSpec:
    directory = write_source_dir(tmp_path, raws)
    return SourceSpec(
        source_id=source_id,
        kind="local_directory",
        allowlist=tuple(allowlist),
        config={"path": str(directory)},
    )


def raw_abstract(
    abstract_id: str,
    publication_date: str,
    *,
    journal: str = "Journal of Cellular Signaling",
    title: str | None = None,
    abstract: str = "A result about cells and signaling pathways.",
    **extra,
) -> dict:
    raw = {
        "abstract_id": abstract_id,
        "title": title or f"Title {abstract_id}",
        "abstract": abstract,
        "journal": journal,
        "publication_date": publication_date,
        "retrieved_at": "2026-01-02T00:00:00+00:00",
    }
    raw.update(extra)
    return raw


class RecordingProvider:
    """Wraps canned replies; records every request it serves."""

    def __init__(self, replies):
        # replies: list cycled through, or a callable(request, n) -> str
        self.replies = replies
        self.requests: list[ModelRequest] = []
        self._lock = threading.Lock()

    def invoke(self, request: ModelRequest) -> ModelResponse:
        with self._lock:
            n = len(self.requests)
            self.requests.append(request)
        if callable(self.replies):
            text = self.replies(request, n)
        else:
            text = self.replies[min(n, len(self.replies) - 1)]
        reasoning = "because" if request.thinking else None
        return ModelResponse(text=text, reasoning_trace=reasoning, usage={}, latency_s=0.0)

    @property
    def calls(self) -> int:
        return len(self.requests)


def register_recording(registry: ModelRegistry, model_id: str, replies) -> RecordingProvider:
    provider = RecordingProvider(replies)
    registry.register_provider(model_id, provider)
    return provider
