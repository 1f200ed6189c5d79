"""Date-restricted literature search used by the tool-augmented solvers.

Simulated mode is the default: a local inverted index over a JSONL corpus
with plain term-frequency ranking. Whatever the backend, results never
include a document published on or after the cutoff date; this is the
retrieval-side contamination guard.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import IndexUnavailable
from .ioutil import read_jsonl

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class SearchDocument:
    doc_id: str
    title: str
    abstract_text: str
    publication_date: date

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "abstract_text": self.abstract_text,
            "publication_date": self.publication_date.isoformat(),
        }


def _document_from_row(row: Mapping[str, Any]) -> SearchDocument:
    return SearchDocument(
        doc_id=str(row.get("doc_id") or row.get("abstract_id")),
        title=str(row.get("title", "")),
        abstract_text=str(row.get("abstract_text") or row.get("abstract") or ""),
        publication_date=date.fromisoformat(str(row["publication_date"])),
    )


class LocalSearchIndex:
    """Term-frequency index over an in-memory document set."""

    def __init__(self, documents: Sequence[SearchDocument]):
        self.documents = list(documents)
        self._term_counts = [
            Counter(tokenize(doc.title + " " + doc.abstract_text)) for doc in self.documents
        ]

    @classmethod
    def from_jsonl(cls, path: Path) -> "LocalSearchIndex":
        try:
            rows = read_jsonl(Path(path))
        except OSError as exc:
            raise IndexUnavailable(f"cannot load search corpus {path}: {exc}") from exc
        return cls([_document_from_row(row) for row in rows])

    def search(self, query: str, *, cutoff_date: date, max_results: int) -> list[SearchDocument]:
        terms = tokenize(query)
        scored: list[tuple[int, str, SearchDocument]] = []
        for doc, counts in zip(self.documents, self._term_counts):
            if doc.publication_date >= cutoff_date:
                continue
            score = sum(counts[term] for term in terms)
            if score > 0:
                scored.append((score, doc.doc_id, doc))
        scored.sort(key=lambda item: (-item[0], item[1]))
        return [doc for _, _, doc in scored[: max(0, max_results)]]


def literature_search(
    index: LocalSearchIndex | None,
    query: str,
    *,
    cutoff_date: date,
    max_results: int,
) -> list[SearchDocument]:
    """Ranked pre-cutoff results; an empty match list is a result, not an error."""
    if index is None:
        raise IndexUnavailable("no search index loaded")
    return index.search(query, cutoff_date=cutoff_date, max_results=max_results)


def format_documents(documents: Sequence[SearchDocument]) -> str:
    if not documents:
        return "No documents found."
    lines = []
    for doc in documents:
        lines.append(
            f"- [{doc.doc_id}] {doc.title} ({doc.publication_date.isoformat()}): {doc.abstract_text}"
        )
    return "\n".join(lines)
