from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def corpus_path() -> Path:
    return REPO_ROOT / "data" / "corpus.json"


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO_ROOT
