from __future__ import annotations

from datetime import date

import pytest

from dbench.errors import IndexUnavailable
from dbench.fixtures import fixture_path
from dbench.search import LocalSearchIndex, SearchDocument, format_documents, literature_search

CUTOFF = date(2025, 11, 30)


def doc(doc_id: str, day: str, text: str = "autophagy in cells") -> SearchDocument:
    return SearchDocument(
        doc_id=doc_id,
        title=f"Title {doc_id}",
        abstract_text=text,
        publication_date=date.fromisoformat(day),
    )


def test_cutoff_filters_documents():
    index = LocalSearchIndex([doc("nov", "2025-11-01"), doc("dec", "2025-12-05")])
    results = literature_search(index, "autophagy", cutoff_date=CUTOFF, max_results=5)
    assert [d.doc_id for d in results] == ["nov"]


def test_cutoff_boundary_is_strict():
    index = LocalSearchIndex([doc("edge", "2025-11-30")])
    assert literature_search(index, "autophagy", cutoff_date=CUTOFF, max_results=5) == []


def test_no_match_is_empty_not_error():
    index = LocalSearchIndex([doc("a", "2025-01-01")])
    assert literature_search(index, "zymurgy", cutoff_date=CUTOFF, max_results=5) == []


def test_ranking_and_max_results():
    index = LocalSearchIndex(
        [
            doc("weak", "2025-01-01", "autophagy once"),
            doc("strong", "2025-01-02", "autophagy autophagy autophagy"),
            doc("mid", "2025-01-03", "autophagy autophagy"),
        ]
    )
    results = literature_search(index, "autophagy", cutoff_date=CUTOFF, max_results=2)
    assert [d.doc_id for d in results] == ["strong", "mid"]


def test_tie_break_is_deterministic():
    index = LocalSearchIndex([doc("b", "2025-01-01"), doc("a", "2025-01-02")])
    results = literature_search(index, "autophagy", cutoff_date=CUTOFF, max_results=5)
    assert [d.doc_id for d in results] == ["a", "b"]


def test_missing_index_raises():
    with pytest.raises(IndexUnavailable):
        literature_search(None, "q", cutoff_date=CUTOFF, max_results=5)


def test_from_jsonl_accepts_corpus_schema():
    index = LocalSearchIndex.from_jsonl(fixture_path("search_corpus.jsonl"))
    assert len(index.documents) == 12
    results = literature_search(index, "TFEB lysosome", cutoff_date=CUTOFF, max_results=10)
    assert results and all(d.publication_date < CUTOFF for d in results)


def test_format_documents():
    assert format_documents([]) == "No documents found."
    line = format_documents([doc("x", "2025-01-01")])
    assert "[x]" in line and "2025-01-01" in line
