"""Ranked prediction export in the shared predictions-jsonl shape.

Each line is {"cve_id", "ranked"} with ranked entries carrying a CWE id
and its softmax probability, scores non-increasing and ties broken by
ascending CWE number.  Provenance (including the manifest digest) goes
to a sidecar .meta.json because the line schema is exact-key.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import manifest_digest
from .data import cve_sort_key, cwe_number, read_examples
from .errors import ConfigurationError, DataError, RunnerError
from .runner import _encode, load_checkpoint

# The shared schema caps ranked lists at this many entries.
MAX_RANKED = 10

SOFTMAX_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EmitResult:
    path: Path
    count: int
    k: int
    manifest_digest: str


def emit_predictions(
    checkpoint_dir: str | Path,
    split_path: str | Path,
    out_path: str | Path,
    k: int,
) -> EmitResult:
    """Score a split file and write ranked predictions plus a sidecar.

    k is clamped to the label-set size and the schema cap; output rows
    are sorted by numeric CVE id, so reruns are byte-identical.
    """
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    checkpoint = load_checkpoint(checkpoint_dir)
    if checkpoint.manifest is None:
        raise ConfigurationError(
            f"{checkpoint.path}: no manifest.json; predictions need the trained checkpoint directory"
        )
    manifest = checkpoint.manifest
    examples = read_examples(split_path, require_label=False)
    seen: set[str] = set()
    for ex in examples:
        if ex.cve_id in seen:
            raise DataError(f"{split_path}: duplicate cve_id {ex.cve_id}")
        seen.add(ex.cve_id)

    torch.manual_seed(manifest.seed)
    model, tokenizer = checkpoint.model, checkpoint.tokenizer
    model.eval()
    labels = checkpoint.labels
    numbers = [cwe_number(label) for label in labels]
    k_eff = min(k, len(labels), MAX_RANKED)

    ordered = sorted(examples, key=lambda ex: cve_sort_key(ex.cve_id))
    lines: list[str] = []
    with torch.no_grad():
        for start in range(0, len(ordered), manifest.batch_size):
            batch = ordered[start : start + manifest.batch_size]
            texts = [manifest.input_template.format(text=ex.text) for ex in batch]
            logits = model(**_encode(tokenizer, texts, manifest.max_tokens)).logits
            probs = torch.softmax(logits.double(), dim=-1)
            sums = probs.sum(dim=-1)
            if not bool(torch.all(torch.abs(sums - 1.0) <= SOFTMAX_TOLERANCE)):
                raise RunnerError("softmax row does not sum to 1 within tolerance")
            for ex, row in zip(batch, probs.tolist()):
                ranked_idx = sorted(range(len(labels)), key=lambda i: (-row[i], numbers[i]))[:k_eff]
                ranked = [{"cwe": labels[i], "score": float(row[i])} for i in ranked_idx]
                lines.append(json.dumps({"cve_id": ex.cve_id, "ranked": ranked}, separators=(",", ":")))

    out_path = Path(out_path)
    out_path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    digest = manifest_digest(manifest)
    sidecar = {
        "schema_version": 1,
        "command": "predict",
        "manifest_digest": digest,
        "checkpoint": str(checkpoint.path),
        "input": str(split_path),
        "input_sha256": hashlib.sha256(Path(split_path).read_bytes()).hexdigest(),
        "k": k_eff,
        "count": len(lines),
    }
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return EmitResult(path=out_path, count=len(lines), k=k_eff, manifest_digest=digest)
