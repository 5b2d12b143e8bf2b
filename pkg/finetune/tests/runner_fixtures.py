"""Helpers shared by the runner tests: themed corpora and tiny manifests.

Lives outside conftest.py so test modules can import it by a name that
stays unambiguous when this suite runs alongside other test trees.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from finetune_runner import PhaseConfig, RunManifest

LABELS = ("CWE-79", "CWE-89", "CWE-787")

THEMES = {
    "CWE-79": ("script", "cross", "site", "html", "injection", "reflected"),
    "CWE-89": ("sql", "query", "database", "statement", "injection", "parameter"),
    "CWE-787": ("buffer", "overflow", "write", "bounds", "memory", "heap"),
}

FILLER = ("the", "service", "allows", "remote", "attackers", "via", "crafted", "requests")


def corpus_words() -> list[str]:
    words = set(FILLER)
    for theme in THEMES.values():
        words.update(theme)
    return sorted(words)


def make_corpus(
    path: Path,
    n: int,
    *,
    seed: int,
    start: int = 10001,
    labels: tuple[str, ...] = LABELS,
) -> Path:
    """Write n themed records; word choice is seeded, so files are stable."""
    rng = random.Random(seed)
    lines = []
    for i in range(n):
        label = labels[i % len(labels)]
        words = [rng.choice(THEMES[label]) for _ in range(6)]
        words += [rng.choice(FILLER) for _ in range(4)]
        rng.shuffle(words)
        lines.append(
            json.dumps(
                {"cve_id": f"CVE-2024-{start + i}", "description": " ".join(words), "label": label}
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def tiny_manifest(base: Path, **overrides) -> RunManifest:
    settings = dict(
        base_checkpoint=str(base),
        expected_layers=2,
        max_tokens=32,
        batch_size=16,
        phase1=PhaseConfig(frozen_layers=1, learning_rate=5e-3, epochs=4),
        phase2=PhaseConfig(
            frozen_layers=0, learning_rate=2e-3, epochs=3, warmup_fraction=0.06, early_stop_patience=10
        ),
    )
    settings.update(overrides)
    return RunManifest(**settings)
