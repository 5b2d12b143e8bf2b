from __future__ import annotations

import json
from pathlib import Path

import pytest

from cwemap import (
    CweTaxonomy,
    load_ai_labels,
    load_vocabulary,
    merge_labels,
    parse_feed,
    parse_taxonomy,
)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def manifest() -> dict:
    return json.loads((FIXTURES / "manifest.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def taxonomy() -> CweTaxonomy:
    with open(FIXTURES / "taxonomy.csv", "rb") as fh:
        return parse_taxonomy(fh, format="edge-csv")


@pytest.fixture(scope="session")
def vocabulary():
    with open(FIXTURES / "vocabulary.txt", "rb") as fh:
        return load_vocabulary(fh)


@pytest.fixture(scope="session")
def records():
    with open(FIXTURES / "records.jsonl", "rb") as fh:
        result = parse_feed(fh, format="record-jsonl")
    assert not result.rejects
    return result.records


@pytest.fixture(scope="session")
def ai_labels():
    with open(FIXTURES / "ai_labels.jsonl", "rb") as fh:
        return load_ai_labels(fh)


@pytest.fixture(scope="session")
def merged(records, ai_labels, taxonomy):
    return merge_labels(records, ai_labels, taxonomy, depth=1)
