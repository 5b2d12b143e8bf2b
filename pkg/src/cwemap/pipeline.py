"""Label merging, agreement statistics, decontamination, and split building.

Split membership is decided by a keyed hash of the CVE id, never by
positional shuffling, so the assignment is reproducible regardless of
input order, platform, or process count.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Sequence

from .corpus import CveRecord, cve_sort_key
from .errors import ParseError, ValidationError
from .jsonio import dumps_compact, iter_jsonl, read_bytes, sha256_file, source_name, write_json
from .taxonomy import CweId, CweTaxonomy


@dataclass(frozen=True)
class AiLabel:
    cve_id: str
    ai_cwe: CweId


class Agreement(str, enum.Enum):
    EXACT = "exact"
    HIERARCHY_ONLY = "hierarchy_only"
    DISAGREE = "disagree"
    NVD_ONLY = "nvd_only"
    AI_ONLY = "ai_only"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class MergedRecord:
    record: CveRecord
    ai_cwe: CweId | None
    agreement: Agreement

    @property
    def cve_id(self) -> str:
        return self.record.cve_id


def load_ai_labels(source: bytes | str | BinaryIO) -> list[AiLabel]:
    """Read the AI-label JSONL file: {"cve_id": str, "ai_cwe": str}."""
    name = source_name(source)
    labels: list[AiLabel] = []
    for lineno, obj in iter_jsonl(read_bytes(source), name):
        if not isinstance(obj, dict):
            raise ParseError("line is not a JSON object", source=name, line=lineno)
        cve_id = obj.get("cve_id")
        raw_cwe = obj.get("ai_cwe")
        if not isinstance(cve_id, str) or not cve_id:
            raise ParseError(f"missing cve_id: {cve_id!r}", source=name, line=lineno)
        if not isinstance(raw_cwe, str):
            raise ParseError(f"missing ai_cwe for {cve_id}", source=name, line=lineno)
        cwe = CweId.try_parse(raw_cwe)
        if cwe is None:
            raise ParseError(
                f"invalid ai_cwe {raw_cwe!r} for {cve_id}", source=name, line=lineno
            )
        labels.append(AiLabel(cve_id=cve_id, ai_cwe=cwe))
    return labels


def merge_labels(
    records: Sequence[CveRecord],
    ai: Sequence[AiLabel],
    taxonomy: CweTaxonomy,
    depth: int = 1,
) -> list[MergedRecord]:
    """Join AI labels onto records and classify each pair's agreement."""
    by_id: dict[str, CweId] = {}
    for label in ai:
        if label.cve_id in by_id:
            raise ValidationError(f"duplicate AI label for {label.cve_id}")
        by_id[label.cve_id] = label.ai_cwe

    merged: list[MergedRecord] = []
    for record in records:
        ai_cwe = by_id.get(record.cve_id)
        nvd = record.nvd_cwe
        if nvd is not None and ai_cwe is not None:
            if nvd == ai_cwe:
                agreement = Agreement.EXACT
            elif taxonomy.is_hierarchy_equivalent(ai_cwe, nvd, depth):
                agreement = Agreement.HIERARCHY_ONLY
            else:
                agreement = Agreement.DISAGREE
        elif nvd is not None:
            agreement = Agreement.NVD_ONLY
        elif ai_cwe is not None:
            agreement = Agreement.AI_ONLY
        else:
            agreement = Agreement.UNLABELED
        merged.append(MergedRecord(record=record, ai_cwe=ai_cwe, agreement=agreement))
    return merged


def agreement_stats(merged: Sequence[MergedRecord]) -> dict:
    """Agreement rates over records where both labels are present.

    Rates are rounded to 4 decimal places; with no both-labeled records
    they are None rather than zero.
    """
    counts = {a.value: 0 for a in Agreement}
    for m in merged:
        counts[m.agreement.value] += 1
    n_both = counts["exact"] + counts["hierarchy_only"] + counts["disagree"]
    if n_both == 0:
        exact_rate = hierarchy_rate = None
    else:
        exact_rate = round(counts["exact"] / n_both, 4)
        hierarchy_rate = round((counts["exact"] + counts["hierarchy_only"]) / n_both, 4)
    return {
        "n_both": n_both,
        "exact_rate": exact_rate,
        "hierarchy_rate": hierarchy_rate,
        "counts": counts,
    }


def load_banned_ids(source: bytes | str | BinaryIO) -> list[str]:
    """Plain-text banned list: one CVE id per line, '#' comments allowed."""
    text = read_bytes(source).decode("utf-8")
    ids: list[str] = []
    for line in text.split("\n"):
        entry = line.split("#", 1)[0].strip()
        if entry:
            ids.append(entry)
    return ids


@dataclass
class DecontaminationResult:
    clean: list[MergedRecord]
    removed: list[MergedRecord]
    not_found: list[str]


def decontaminate(
    merged: Sequence[MergedRecord], banned_ids: Iterable[str]
) -> DecontaminationResult:
    """Remove records whose id is banned (case-insensitive, trimmed).

    Banned ids absent from the corpus are reported in `not_found`.
    """
    normalized: list[str] = []
    seen: set[str] = set()
    for raw in banned_ids:
        key = raw.strip().upper()
        if key and key not in seen:
            seen.add(key)
            normalized.append(key)
    banned = set(normalized)
    clean: list[MergedRecord] = []
    removed: list[MergedRecord] = []
    hit: set[str] = set()
    for m in merged:
        key = m.cve_id.upper()
        if key in banned:
            removed.append(m)
            hit.add(key)
        else:
            clean.append(m)
    not_found = [b for b in normalized if b not in hit]
    return DecontaminationResult(clean=clean, removed=removed, not_found=not_found)


# Calibrated so a corpus with the usual exact-agreement share lands near a
# 27.9K/27.8K/234.8K val/test/train partition; documented defaults, not
# ground truth.
DEFAULT_EVAL_FRACTION = 0.3111
DEFAULT_VAL_SHARE = 0.5010

_ASSIGN_DOMAIN = b"cwemap.assign"
_VALTEST_DOMAIN = b"cwemap.valtest"


@dataclass(frozen=True)
class SplitConfig:
    seed: int
    vocabulary: tuple[CweId, ...]
    eval_fraction: float = DEFAULT_EVAL_FRACTION
    val_share: float = DEFAULT_VAL_SHARE
    equivalence_depth: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.eval_fraction <= 1.0:
            raise ValueError(f"eval_fraction out of [0,1]: {self.eval_fraction}")
        if not 0.0 <= self.val_share <= 1.0:
            raise ValueError(f"val_share out of [0,1]: {self.val_share}")
        if self.equivalence_depth < 1:
            raise ValueError(f"equivalence_depth must be >= 1, got {self.equivalence_depth}")
        if not self.vocabulary:
            raise ValidationError("vocabulary must not be empty")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "eval_fraction": self.eval_fraction,
            "val_share": self.val_share,
            "equivalence_depth": self.equivalence_depth,
            "vocabulary": [c.value for c in self.vocabulary],
        }


@dataclass(frozen=True)
class SplitExample:
    cve_id: str
    label: CweId
    description: str


@dataclass
class SplitAssignment:
    train: list[SplitExample] = field(default_factory=list)
    val: list[SplitExample] = field(default_factory=list)
    test: list[SplitExample] = field(default_factory=list)
    excluded: list[tuple[str, str]] = field(default_factory=list)

    def sizes(self) -> dict[str, int]:
        return {
            "train": len(self.train),
            "val": len(self.val),
            "test": len(self.test),
            "excluded": len(self.excluded),
        }


def unit_hash(seed: int, domain: bytes, cve_id: str) -> float:
    """Keyed hash of a CVE id mapped to [0, 1).

    The rule, exactly: blake2b with digest_size 8, key = the low 64 bits
    of `seed` little-endian, person = `domain`, message = the uppercased
    id encoded UTF-8; the digest read as a big-endian integer over 2^64.
    """
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(
        cve_id.upper().encode("utf-8"), key=key, person=domain, digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") / 2.0**64


REASON_NO_AI_LABEL = "ai-label-missing"
REASON_NOT_IN_VOCABULARY = "label-not-in-vocabulary"


def build_splits(merged: Sequence[MergedRecord], cfg: SplitConfig) -> SplitAssignment:
    """Assign records to train/val/test (decontamination is assumed done).

    Eligible records are those with an AI label inside the vocabulary.
    Exact-agreement records go to the eval reserve when
    unit_hash(seed, "cwemap.assign", id) < eval_fraction, then to val when
    unit_hash(seed, "cwemap.valtest", id) < val_share, else test.  Every
    other eligible record trains on its AI label.  Outputs are sorted by
    numeric CVE id.
    """
    vocab = set(cfg.vocabulary)
    assignment = SplitAssignment()
    for m in merged:
        if m.ai_cwe is None:
            assignment.excluded.append((m.cve_id, REASON_NO_AI_LABEL))
            continue
        if m.ai_cwe not in vocab:
            assignment.excluded.append((m.cve_id, REASON_NOT_IN_VOCABULARY))
            continue
        example = SplitExample(
            cve_id=m.cve_id, label=m.ai_cwe, description=m.record.description
        )
        if m.agreement is Agreement.EXACT:
            if unit_hash(cfg.seed, _ASSIGN_DOMAIN, m.cve_id) < cfg.eval_fraction:
                if unit_hash(cfg.seed, _VALTEST_DOMAIN, m.cve_id) < cfg.val_share:
                    assignment.val.append(example)
                else:
                    assignment.test.append(example)
            else:
                assignment.train.append(example)
        else:
            assignment.train.append(example)
    key = lambda e: cve_sort_key(e.cve_id)
    assignment.train.sort(key=key)
    assignment.val.sort(key=key)
    assignment.test.sort(key=key)
    assignment.excluded.sort(key=lambda pair: cve_sort_key(pair[0]))
    return assignment


def write_splits(
    assignment: SplitAssignment,
    out_dir: str | Path,
    cfg: SplitConfig,
    stats: Mapping | None = None,
    extra_summary: Mapping | None = None,
) -> dict:
    """Write train/val/test jsonl plus excluded list and a summary with
    per-file content digests.  Returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, examples in (
        ("train", assignment.train),
        ("val", assignment.val),
        ("test", assignment.test),
    ):
        path = out / f"{name}.jsonl"
        with open(path, "wb") as fh:
            for ex in examples:
                row = {"cve_id": ex.cve_id, "description": ex.description, "label": ex.label.value}
                fh.write(dumps_compact(row).encode("utf-8"))
                fh.write(b"\n")
        digests[f"{name}.jsonl"] = sha256_file(path)
    excluded_path = out / "excluded.jsonl"
    with open(excluded_path, "wb") as fh:
        for cve_id, reason in assignment.excluded:
            fh.write(dumps_compact({"cve_id": cve_id, "reason": reason}).encode("utf-8"))
            fh.write(b"\n")
    digests["excluded.jsonl"] = sha256_file(excluded_path)

    reasons: dict[str, int] = {}
    for _, reason in assignment.excluded:
        reasons[reason] = reasons.get(reason, 0) + 1
    summary = {
        "schema_version": 1,
        "sizes": assignment.sizes(),
        "excluded_reasons": reasons,
        "agreement": dict(stats) if stats is not None else None,
        "config": cfg.to_dict(),
        "digests": digests,
    }
    if extra_summary:
        summary.update(extra_summary)
    write_json(out / "split_summary.json", summary)
    return summary


def load_split_file(source: bytes | str | BinaryIO) -> list[SplitExample]:
    """Read one split file back: {"cve_id", "description", "label"} per line."""
    name = source_name(source)
    examples: list[SplitExample] = []
    for lineno, obj in iter_jsonl(read_bytes(source), name):
        if not isinstance(obj, dict):
            raise ParseError("line is not a JSON object", source=name, line=lineno)
        cve_id = obj.get("cve_id")
        description = obj.get("description")
        raw_label = obj.get("label")
        if not isinstance(cve_id, str) or not cve_id:
            raise ParseError(f"missing cve_id: {cve_id!r}", source=name, line=lineno)
        if not isinstance(description, str):
            raise ParseError(f"missing description for {cve_id}", source=name, line=lineno)
        if not isinstance(raw_label, str):
            raise ParseError(f"missing label for {cve_id}", source=name, line=lineno)
        label = CweId.try_parse(raw_label)
        if label is None:
            raise ParseError(f"invalid label {raw_label!r} for {cve_id}", source=name, line=lineno)
        examples.append(SplitExample(cve_id=cve_id, label=label, description=description))
    return examples


WORKSHEET_HEADER = ("cve_id", "description", "nvd_cwe", "ai_cwe", "verdict")


@dataclass(frozen=True)
class WorksheetRow:
    cve_id: str
    description: str
    nvd_cwe: CweId
    ai_cwe: CweId
    verdict: str = ""


def sample_disagreements(
    merged: Sequence[MergedRecord], n: int, seed: int
) -> list[WorksheetRow]:
    """Uniform sample of disagreement records, without replacement.

    Deterministic in `seed` and independent of input order (the pool is
    id-sorted before sampling).
    """
    pool = sorted(
        (m for m in merged if m.agreement is Agreement.DISAGREE),
        key=lambda m: cve_sort_key(m.cve_id),
    )
    if n < 0:
        raise ValidationError(f"sample size must be >= 0, got {n}")
    if n > len(pool):
        raise ValidationError(
            f"requested {n} disagreement samples but only {len(pool)} available"
        )
    rng = random.Random(seed)
    chosen = rng.sample(range(len(pool)), n)
    rows = []
    for index in chosen:
        m = pool[index]
        assert m.record.nvd_cwe is not None and m.ai_cwe is not None
        rows.append(
            WorksheetRow(
                cve_id=m.cve_id,
                description=m.record.description,
                nvd_cwe=m.record.nvd_cwe,
                ai_cwe=m.ai_cwe,
            )
        )
    return rows


def write_worksheet(rows: Sequence[WorksheetRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WORKSHEET_HEADER)
        for row in rows:
            writer.writerow(
                [row.cve_id, row.description, row.nvd_cwe.value, row.ai_cwe.value, row.verdict]
            )
