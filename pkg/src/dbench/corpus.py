"""Abstract acquisition: fetch, normalize, deduplicate, and temporally filter.

Three selection criteria shape a corpus snapshot: the sub-domain taxonomy,
a curated quartile-annotated journal allowlist, and an inclusive calendar
window. Eligibility against evaluated-model release dates is a separate,
strict check: a record counts as uncontaminated for a model only when it was
published strictly after that model's release date.
"""

from __future__ import annotations

import calendar
import csv
import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Sequence

import requests

from .errors import (
    ConfigError,
    MalformedUpstreamRecord,
    MissingReleaseDate,
    SnapshotExists,
    SourceUnreachable,
)
from .ioutil import canonical_dumps, digest_files, read_jsonl, slugify, write_jsonl

logger = logging.getLogger(__name__)

SNAPSHOT_ID_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")

QUARTILES = ("Q1", "Q2", "Q3", "Q4", "unknown")

# Default sub-domain taxonomy used when the pipeline config does not override it.
DEFAULT_SUBDOMAINS = (
    "Biochemistry & molecular biology",
    "Biophysics",
    "Biotechnology & applied microbiology",
    "Cell & tissue engineering",
    "Cell biology",
    "Chemistry, medicinal",
    "Genetics & heredity",
    "Mathematical & computational biology",
    "Neurosciences",
    "Pathology",
    "Pharmacology & pharmacy",
    "Physiology",
)


@dataclass(frozen=True)
class TemporalWindow:
    """Inclusive calendar-date interval."""

    start_date: date
    end_date: date

    def __post_init__(self) -> None:
        if self.start_date > self.end_date:
            raise ValueError("window start must not be after its end")

    def contains(self, day: date) -> bool:
        return self.start_date <= day <= self.end_date

    def to_dict(self) -> dict:
        return {"start_date": self.start_date.isoformat(), "end_date": self.end_date.isoformat()}

    @classmethod
    def from_dict(cls, payload: Mapping[str, str]) -> "TemporalWindow":
        return cls(
            start_date=date.fromisoformat(payload["start_date"]),
            end_date=date.fromisoformat(payload["end_date"]),
        )


def window_for_month(snapshot_id: str) -> TemporalWindow:
    """The calendar-month window a YYYY-MM snapshot id denotes."""
    if not SNAPSHOT_ID_RE.match(snapshot_id):
        raise ConfigError(f"snapshot id {snapshot_id!r} does not match YYYY-MM")
    year, month = int(snapshot_id[:4]), int(snapshot_id[5:7])
    last = calendar.monthrange(year, month)[1]
    return TemporalWindow(date(year, month, 1), date(year, month, last))


@dataclass(frozen=True)
class AbstractRecord:
    """One publication abstract with provenance, sub-domain, and publication date."""

    abstract_id: str
    title: str
    abstract_text: str
    journal: str
    subdomain: str
    quartile: str
    publication_date: date
    retrieved_at: datetime
    external_id: str | None = None

    def __post_init__(self) -> None:
        if not self.abstract_text:
            raise ValueError("abstract_text must be non-empty")
        if self.quartile not in QUARTILES:
            raise ValueError(f"invalid quartile {self.quartile!r}")

    def to_dict(self) -> dict:
        return {
            "abstract_id": self.abstract_id,
            "external_id": self.external_id,
            "title": self.title,
            "abstract_text": self.abstract_text,
            "journal": self.journal,
            "subdomain": self.subdomain,
            "quartile": self.quartile,
            "publication_date": self.publication_date.isoformat(),
            "retrieved_at": self.retrieved_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "AbstractRecord":
        return cls(
            abstract_id=payload["abstract_id"],
            external_id=payload.get("external_id"),
            title=payload["title"],
            abstract_text=payload["abstract_text"],
            journal=payload["journal"],
            subdomain=payload["subdomain"],
            quartile=payload["quartile"],
            publication_date=date.fromisoformat(payload["publication_date"]),
            retrieved_at=_parse_timestamp(payload["retrieved_at"]),
        )


@dataclass(frozen=True)
class AllowlistEntry:
    journal: str
    subdomain: str
    quartile: str


@dataclass
class SourceSpec:
    """Where abstracts come from and which journals they may come from."""

    source_id: str
    kind: str  # "literature_api" | "local_directory"
    allowlist: tuple[AllowlistEntry, ...]
    config: Mapping[str, Any] = field(default_factory=dict)
    q1_only: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("literature_api", "local_directory"):
            raise ConfigError(f"unknown source kind {self.kind!r}")
        seen: set[str] = set()
        for entry in self.allowlist:
            if entry.journal in seen:
                # One subdomain per journal; a duplicate row is a curation error, not a guess.
                raise ConfigError(f"duplicate allowlist row for journal {entry.journal!r}")
            seen.add(entry.journal)
            if entry.quartile not in QUARTILES:
                raise ConfigError(f"invalid quartile {entry.quartile!r} for {entry.journal!r}")
            if self.q1_only and entry.quartile != "Q1":
                raise ConfigError(
                    f"journal {entry.journal!r} is {entry.quartile}, but the Q1 policy is enabled"
                )

    def entry_for(self, journal: str) -> AllowlistEntry | None:
        for entry in self.allowlist:
            if entry.journal == journal:
                return entry
        return None


def load_allowlist(path: Path) -> tuple[AllowlistEntry, ...]:
    """Read the curated journal allowlist CSV (header: journal,subdomain,quartile)."""
    entries: list[AllowlistEntry] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"journal", "subdomain", "quartile"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ConfigError(f"allowlist {path} must have header journal,subdomain,quartile")
        for row in reader:
            entries.append(
                AllowlistEntry(
                    journal=row["journal"].strip(),
                    subdomain=row["subdomain"].strip(),
                    quartile=row["quartile"].strip(),
                )
            )
    return tuple(entries)


@dataclass(frozen=True)
class ResolvedDate:
    """A possibly partial upstream date, resolved once per downstream check.

    Month-precision dates resolve to the first day for window membership and
    to the last day for the release-date eligibility comparison; year-only
    dates are rejected outright.
    """

    for_window: date
    for_eligibility: date
    precision: str  # "day" | "month"


_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_YEAR_RE = re.compile(r"^\d{4}$")


def resolve_publication_date(raw: str) -> ResolvedDate:
    text = raw.strip()
    month_match = _MONTH_RE.match(text)
    if month_match:
        year, month = int(month_match.group(1)), int(month_match.group(2))
        if not 1 <= month <= 12:
            raise MalformedUpstreamRecord(f"invalid month in date {raw!r}")
        last = calendar.monthrange(year, month)[1]
        return ResolvedDate(date(year, month, 1), date(year, month, last), "month")
    if _YEAR_RE.match(text):
        raise MalformedUpstreamRecord(f"year-only publication date {raw!r} is rejected")
    try:
        day = date.fromisoformat(text)
    except ValueError as exc:
        raise MalformedUpstreamRecord(f"unparseable publication date {raw!r}") from exc
    return ResolvedDate(day, day, "day")


def _parse_timestamp(raw: str) -> datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp


class IngestLog:
    """Collects skip entries and month-precision eligibility dates during a fetch.

    Nothing is ever dropped silently: every excluded upstream record leaves
    one entry here.
    """

    def __init__(self) -> None:
        self.skipped: list[dict] = []
        self.eligibility_dates: dict[str, date] = {}

    def skip(self, source_id: str, identifier: str, reason: str, detail: str = "") -> None:
        entry = {"source_id": source_id, "identifier": identifier, "reason": reason, "detail": detail}
        self.skipped.append(entry)
        logger.info("skipped upstream record %s (%s): %s", identifier, reason, detail)

    def note_month_precision(self, abstract_id: str, eligibility_date: date) -> None:
        self.eligibility_dates[abstract_id] = eligibility_date

    def count(self, reason: str) -> int:
        return sum(1 for entry in self.skipped if entry["reason"] == reason)


def _derive_abstract_id(source_id: str, external_id: str | None, title: str, journal: str) -> str:
    basis = external_id or f"{_normalize_title(title)}|{journal}"
    return f"{source_id}-{hashlib.sha256(basis.encode('utf-8')).hexdigest()[:12]}"


def _normalize_title(title: str) -> str:
    return " ".join(title.lower().split())


def _normalize_raw(
    raw: Mapping[str, Any],
    identifier: str,
    source: SourceSpec,
    window: TemporalWindow,
    log: IngestLog,
) -> AbstractRecord | None:
    journal = str(raw.get("journal", "")).strip()
    entry = source.entry_for(journal)
    if entry is None:
        log.skip(source.source_id, identifier, "journal_not_allowlisted", journal)
        return None
    title = str(raw.get("title", "")).strip()
    abstract_text = str(raw.get("abstract_text") or raw.get("abstract") or "").strip()
    if not abstract_text:
        log.skip(source.source_id, identifier, "empty_abstract", title)
        return None
    try:
        resolved = resolve_publication_date(str(raw.get("publication_date") or raw.get("date") or ""))
    except MalformedUpstreamRecord as exc:
        log.skip(source.source_id, identifier, "malformed_date", str(exc))
        return None
    if not window.contains(resolved.for_window):
        log.skip(source.source_id, identifier, "outside_window", resolved.for_window.isoformat())
        return None
    external_id = raw.get("external_id") or raw.get("doi") or raw.get("pmid")
    external_id = str(external_id) if external_id else None
    abstract_id = str(raw.get("abstract_id") or "") or _derive_abstract_id(
        source.source_id, external_id, title, journal
    )
    retrieved_raw = raw.get("retrieved_at")
    retrieved_at = (
        _parse_timestamp(str(retrieved_raw)) if retrieved_raw else datetime.now(timezone.utc)
    )
    record = AbstractRecord(
        abstract_id=abstract_id,
        external_id=external_id,
        title=title,
        abstract_text=abstract_text,
        journal=journal,
        subdomain=entry.subdomain,
        quartile=entry.quartile,
        publication_date=resolved.for_window,
        retrieved_at=retrieved_at,
    )
    if resolved.precision == "month":
        log.note_month_precision(abstract_id, resolved.for_eligibility)
    return record


def _iter_local_directory(source: SourceSpec) -> Iterator[tuple[str, Mapping[str, Any]]]:
    path = Path(source.config.get("path", ""))
    if not path.is_dir():
        raise SourceUnreachable(f"source directory {path} does not exist")
    for file_path in sorted(path.glob("*.json")):
        try:
            payload = json.loads(file_path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            yield file_path.name, {"__malformed__": str(exc)}
            continue
        if isinstance(payload, list):
            for index, item in enumerate(payload):
                yield f"{file_path.name}[{index}]", item
        else:
            yield file_path.name, payload


class LiteratureApiClient:
    """Minimal paginated JSON client with a polite minimum call interval.

    Expected wire format per page: {"items": [...], "next_page": int | null};
    each item carries title/abstract/journal/date fields. The API key, when
    required, comes from the env var named in the source config.
    """

    def __init__(
        self,
        base_url: str,
        *,
        api_key_env: str = "LITERATURE_API_KEY",
        min_interval_s: float = 0.34,
        transport: Callable[..., Mapping[str, Any]] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url
        self.api_key_env = api_key_env
        self.min_interval_s = min_interval_s
        self._transport = transport or self._http_get
        self._sleep = sleep
        self._last_call = 0.0

    def _http_get(self, url: str, params: Mapping[str, Any]) -> Mapping[str, Any]:
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = requests.get(url, params=params, headers=headers, timeout=30)
            response.raise_for_status()
            return response.json()
        except requests.RequestException as exc:
            raise SourceUnreachable(f"literature API call failed: {exc}") from exc

    def _throttle(self) -> None:
        elapsed = time.monotonic() - self._last_call
        if elapsed < self.min_interval_s:
            self._sleep(self.min_interval_s - elapsed)
        self._last_call = time.monotonic()

    def pages(self, params: Mapping[str, Any]) -> Iterator[Mapping[str, Any]]:
        page: int | None = 1
        while page is not None:
            self._throttle()
            body = self._transport(self.base_url, {**params, "page": page})
            yield body
            page = body.get("next_page")


def _iter_literature_api(
    source: SourceSpec, window: TemporalWindow
) -> Iterator[tuple[str, Mapping[str, Any]]]:
    client_factory = source.config.get("client_factory")
    if client_factory is not None:
        client = client_factory()
    else:
        base_url = source.config.get("base_url")
        if not base_url:
            raise SourceUnreachable(f"source {source.source_id!r} has no base_url configured")
        client = LiteratureApiClient(
            base_url,
            api_key_env=source.config.get("api_key_env", "LITERATURE_API_KEY"),
            min_interval_s=float(source.config.get("min_interval_s", 0.34)),
        )
    for entry in source.allowlist:
        params = {
            "journal": entry.journal,
            "from": window.start_date.isoformat(),
            "to": window.end_date.isoformat(),
        }
        for page_index, body in enumerate(client.pages(params), start=1):
            for item_index, item in enumerate(body.get("items", [])):
                yield f"{entry.journal}/p{page_index}[{item_index}]", item


def fetch_abstracts(
    source: SourceSpec, window: TemporalWindow, *, log: IngestLog | None = None
) -> list[AbstractRecord]:
    """Fetch and normalize every allowlisted abstract inside the window.

    Pagination is exhausted for API sources. Malformed upstream records are
    skipped with a log entry, never silently dropped. Records are tagged with
    the allowlist's subdomain and quartile.
    """
    log = log if log is not None else IngestLog()
    if source.kind == "local_directory":
        raw_iter = _iter_local_directory(source)
    else:
        raw_iter = _iter_literature_api(source, window)
    records: list[AbstractRecord] = []
    for identifier, raw in raw_iter:
        if "__malformed__" in raw:
            log.skip(source.source_id, identifier, "unreadable_record", str(raw["__malformed__"]))
            continue
        record = _normalize_raw(raw, identifier, source, window, log)
        if record is not None:
            records.append(record)
    records.sort(key=lambda r: (r.publication_date.isoformat(), r.abstract_id))
    return records


@dataclass
class EligibilityReport:
    """Per-model contamination eligibility over a record set."""

    per_model: dict[str, dict[str, list[str]]]
    flagged: list[str]  # abstract ids ineligible for at least one model

    def to_dict(self) -> dict:
        return {"per_model": self.per_model, "flagged": self.flagged}


def enforce_temporal_separation(
    records: Sequence[AbstractRecord],
    release_dates: Mapping[str, date],
    models: Sequence[str] | None = None,
    *,
    eligibility_dates: Mapping[str, date] | None = None,
) -> EligibilityReport:
    """List, per model, the records published strictly after its release date.

    ``eligibility_dates`` carries the month-precision resolutions collected at
    ingest time; records absent from it use their stored publication date.
    """
    model_ids = list(models) if models is not None else sorted(release_dates)
    for model_id in model_ids:
        if model_id not in release_dates:
            raise MissingReleaseDate(f"model {model_id!r} has no registered release date")
    overrides = dict(eligibility_dates or {})
    per_model: dict[str, dict[str, list[str]]] = {}
    flagged: set[str] = set()
    for model_id in model_ids:
        released = release_dates[model_id]
        eligible: list[str] = []
        ineligible: list[str] = []
        for record in records:
            effective = overrides.get(record.abstract_id, record.publication_date)
            if effective > released:
                eligible.append(record.abstract_id)
            else:
                ineligible.append(record.abstract_id)
                flagged.add(record.abstract_id)
        per_model[model_id] = {"eligible": sorted(eligible), "ineligible": sorted(ineligible)}
    return EligibilityReport(per_model=per_model, flagged=sorted(flagged))


def dedupe(records: Sequence[AbstractRecord]) -> list[AbstractRecord]:
    """Collapse duplicates; output is stable by (publication_date, abstract_id).

    Records sharing an external id keep the earliest-retrieved copy. Records
    without one collapse on normalized (title, journal).
    """
    def retrieval_key(record: AbstractRecord) -> tuple:
        return (record.retrieved_at, record.abstract_id)

    by_external: dict[str, AbstractRecord] = {}
    by_title: dict[tuple[str, str], AbstractRecord] = {}
    for record in records:
        if record.external_id:
            current = by_external.get(record.external_id)
            if current is None or retrieval_key(record) < retrieval_key(current):
                by_external[record.external_id] = record
        else:
            key = (_normalize_title(record.title), record.journal)
            current = by_title.get(key)
            if current is None or retrieval_key(record) < retrieval_key(current):
                by_title[key] = record
    survivors = list(by_external.values()) + list(by_title.values())
    survivors.sort(key=lambda r: (r.publication_date.isoformat(), r.abstract_id))
    return survivors


def corpus_dir(root: Path, snapshot_id: str) -> Path:
    return Path(root) / "corpus" / snapshot_id


def write_corpus_snapshot(
    records: Sequence[AbstractRecord],
    snapshot_id: str,
    root: Path,
    *,
    window: TemporalWindow,
    source_ids: Sequence[str],
    skips: Sequence[dict] = (),
) -> dict:
    """Persist a snapshot as one JSONL file per subdomain plus a manifest.

    Raises SnapshotExists rather than overwriting an existing snapshot.
    """
    if not SNAPSHOT_ID_RE.match(snapshot_id):
        raise ConfigError(f"snapshot id {snapshot_id!r} does not match YYYY-MM")
    target = corpus_dir(root, snapshot_id)
    manifest_path = target / "manifest.json"
    if manifest_path.exists():
        raise SnapshotExists(f"corpus snapshot {snapshot_id!r} already exists at {target}")
    target.mkdir(parents=True, exist_ok=True)

    by_subdomain: dict[str, list[AbstractRecord]] = {}
    for record in records:
        by_subdomain.setdefault(record.subdomain, []).append(record)
    counts: dict[str, int] = {}
    written: list[Path] = []
    for subdomain in sorted(by_subdomain):
        group = sorted(
            by_subdomain[subdomain], key=lambda r: (r.publication_date.isoformat(), r.abstract_id)
        )
        path = target / f"{slugify(subdomain)}.jsonl"
        write_jsonl(path, [r.to_dict() for r in group])
        counts[subdomain] = len(group)
        written.append(path)
    if skips:
        write_jsonl(target / "skips.jsonl", list(skips))
    manifest = {
        "snapshot_id": snapshot_id,
        "window": window.to_dict(),
        "source_ids": sorted(source_ids),
        "counts": counts,
        "total": len(records),
        "digest": digest_files(target, written),
    }
    manifest_path.write_text(canonical_dumps(manifest) + "\n", encoding="utf-8")
    return manifest


def read_corpus_snapshot(root: Path, snapshot_id: str) -> tuple[list[AbstractRecord], dict]:
    target = corpus_dir(root, snapshot_id)
    manifest_path = target / "manifest.json"
    if not manifest_path.exists():
        raise SourceUnreachable(f"no corpus snapshot at {target}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    records: list[AbstractRecord] = []
    for path in sorted(target.glob("*.jsonl")):
        if path.name == "skips.jsonl":
            continue
        for row in read_jsonl(path):
            records.append(AbstractRecord.from_dict(row))
    return records, manifest
