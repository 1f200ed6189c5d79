"""Bundled hermetic fixture: a small abstract corpus, allowlist, search corpus,
human scores, and a config wired to the deterministic offline models."""

from __future__ import annotations

from pathlib import Path

FIXTURE_DIR = Path(__file__).resolve().parent


def fixture_path(name: str = "") -> Path:
    return FIXTURE_DIR / name if name else FIXTURE_DIR
