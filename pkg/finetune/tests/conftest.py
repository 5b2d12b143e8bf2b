"""Session fixtures: a tiny random checkpoint and one trained run per phase.

Training fixtures are session-scoped because each run costs a second or
two; tests that need a fresh model build their own.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from runner_fixtures import LABELS, corpus_words, make_corpus, tiny_manifest

from finetune_runner import RunManifest, make_tiny_checkpoint, run_phase1, run_phase2


@pytest.fixture(scope="session")
def tiny_base(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("checkpoints") / "base"
    return make_tiny_checkpoint(out, LABELS, corpus_words(), seed=11)


@pytest.fixture(scope="session")
def manifest(tiny_base) -> RunManifest:
    return tiny_manifest(tiny_base)


@pytest.fixture(scope="session")
def splits(tmp_path_factory) -> dict[str, Path]:
    d = tmp_path_factory.mktemp("splits")
    return {
        "train": make_corpus(d / "train.jsonl", 96, seed=5),
        "val": make_corpus(d / "val.jsonl", 30, seed=6, start=50001),
        "test": make_corpus(d / "test.jsonl", 30, seed=7, start=70001),
    }


@pytest.fixture(scope="session")
def phase1_run(manifest, splits, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "phase1"
    return run_phase1(manifest, splits["train"], splits["val"], out)


@pytest.fixture(scope="session")
def phase2_run(manifest, splits, phase1_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "phase2"
    return run_phase2(manifest, phase1_run.out_dir, splits["train"], splits["val"], out)
