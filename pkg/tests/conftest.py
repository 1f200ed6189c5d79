from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from dbench.config import load_config
from dbench.fixtures import fixture_path
from dbench.gateway import ModelGateway, ModelRegistry
from dbench.pipeline import SnapshotPipeline


@pytest.fixture
def registry():
    return ModelRegistry()


@pytest.fixture
def gateway(registry):
    # No cache, no real sleeping: unit tests count provider calls directly.
    return ModelGateway(registry, permits=8, max_retries=2, sleep=lambda _s: None)


@pytest.fixture(scope="session")
def fixture_config_path():
    return fixture_path("config.yaml")


@pytest.fixture
def fixture_config(fixture_config_path):
    return load_config(fixture_config_path)


@pytest.fixture
def pipeline(tmp_path, fixture_config):
    return SnapshotPipeline(fixture_config, tmp_path / "ws")
