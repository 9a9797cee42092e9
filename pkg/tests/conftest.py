from __future__ import annotations

from pathlib import Path

import pytest

from fchprobe import casegen, knowledge

SAMPLE = Path(__file__).resolve().parents[1] / "src" / "fchprobe" / "data" / "sample"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def sample_dir() -> Path:
    return SAMPLE


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def sample_store():
    return knowledge.load_store_dir(SAMPLE)


@pytest.fixture(scope="session")
def templates():
    return casegen.default_templates()
