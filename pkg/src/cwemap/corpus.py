"""CVE feed ingestion: normalization, deduplication, and quality filtering."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

from .errors import ParseError, ValidationError
from .jsonio import dumps_compact, iter_jsonl, read_bytes, source_name, write_json
from .taxonomy import CweId

log = logging.getLogger(__name__)

CVE_ID_RE = re.compile(r"CVE-[0-9]{4}-[0-9]{4,}\Z")

FEED_FORMATS = ("nvd-json-2", "record-jsonl")

RECORD_FIELDS = ("cve_id", "description", "nvd_cwe", "last_modified", "attack_techniques")

DEFAULT_MIN_LENGTH = 20
DEFAULT_REJECT_MARKERS = ("** REJECT **", "** RESERVED **")


@dataclass(frozen=True)
class CveRecord:
    """One normalized CVE entry.

    `attack_techniques` is carried through untouched; nothing in this
    toolkit interprets it.
    """

    cve_id: str
    description: str
    nvd_cwe: CweId | None = None
    last_modified: str | None = None
    attack_techniques: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not CVE_ID_RE.fullmatch(self.cve_id):
            raise ValueError(f"not a canonical CVE id: {self.cve_id!r}")

    @property
    def year(self) -> int:
        return int(self.cve_id[4:8])


def cve_sort_key(cve_id: str) -> tuple[int, int]:
    """Numeric (year, sequence) ordering for canonical CVE ids."""
    _, year, seq = cve_id.split("-", 2)
    return int(year), int(seq)


@dataclass(frozen=True)
class DescriptionFilter:
    min_length: int = DEFAULT_MIN_LENGTH
    reject_markers: tuple[str, ...] = DEFAULT_REJECT_MARKERS

    def __post_init__(self) -> None:
        if self.min_length < 0:
            raise ValueError(f"min_length must be >= 0, got {self.min_length}")

    def drops(self, record: CveRecord) -> bool:
        if len(record.description) < self.min_length:
            return True
        return any(marker in record.description for marker in self.reject_markers)


@dataclass
class FeedParseResult:
    records: list[CveRecord]
    rejects: list[dict] = field(default_factory=list)

    def reject(self, line: int, reason: str) -> None:
        self.rejects.append({"line": line, "reason": reason})


def parse_feed(
    source: bytes | str | BinaryIO,
    format: str = "nvd-json-2",
    strict: bool = False,
) -> FeedParseResult:
    """Parse a CVE feed into normalized records.

    Record-level problems (missing or malformed ids, no English
    description) land in the rejects list and parsing continues;
    malformed JSON is fatal.  For nvd-json-2 the reject "line" is the
    1-based entry index, for record-jsonl the actual line number.
    """
    name = source_name(source)
    data = read_bytes(source)
    if format == "nvd-json-2":
        return _parse_nvd_json_2(data, name)
    if format == "record-jsonl":
        return _parse_record_jsonl(data, name, strict=strict)
    raise ValueError(f"unknown feed format: {format!r}")


def _parse_nvd_json_2(data: bytes, source: str) -> FeedParseResult:
    try:
        doc = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8: {exc}", source=source) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", source=source, offset=exc.pos) from exc
    if isinstance(doc, dict):
        entries = doc.get("vulnerabilities", [])
    elif isinstance(doc, list):
        entries = doc
    else:
        raise ParseError("expected a vulnerability array or feed object", source=source)

    result = FeedParseResult(records=[])
    for index, entry in enumerate(entries, start=1):
        cve = entry.get("cve", entry) if isinstance(entry, dict) else None
        if not isinstance(cve, dict):
            result.reject(index, "entry is not an object")
            continue
        cve_id = cve.get("id")
        if not isinstance(cve_id, str) or not CVE_ID_RE.fullmatch(cve_id):
            result.reject(index, f"missing or malformed cve id: {cve_id!r}")
            continue
        description = _english_description(cve.get("descriptions"))
        if description is None:
            result.reject(index, f"{cve_id}: no English description")
            continue
        record = CveRecord(
            cve_id=cve_id,
            description=description,
            nvd_cwe=_first_cwe_weakness(cve.get("weaknesses")),
            last_modified=cve.get("lastModified"),
        )
        result.records.append(record)
    return result


def _english_description(descriptions: object) -> str | None:
    if not isinstance(descriptions, list):
        return None
    for item in descriptions:
        if isinstance(item, dict) and item.get("lang") == "en":
            value = item.get("value")
            if isinstance(value, str):
                return value
    return None


def _first_cwe_weakness(weaknesses: object) -> CweId | None:
    """First canonical CWE token, Primary-source entries scanned first.

    Non-numeric tokens such as "NVD-CWE-noinfo" never match.
    """
    if not isinstance(weaknesses, list):
        return None
    ordered = sorted(
        (w for w in weaknesses if isinstance(w, dict)),
        key=lambda w: 0 if w.get("type") == "Primary" else 1,
    )
    for weakness in ordered:
        for item in weakness.get("description") or []:
            if not isinstance(item, dict):
                continue
            value = item.get("value")
            if isinstance(value, str):
                cwe = CweId.try_parse(value)
                if cwe is not None:
                    return cwe
    return None


_warned_fields: set[tuple[str, str]] = set()


def _parse_record_jsonl(data: bytes, source: str, strict: bool) -> FeedParseResult:
    result = FeedParseResult(records=[])
    for lineno, obj in iter_jsonl(data, source):
        if not isinstance(obj, dict):
            result.reject(lineno, "line is not a JSON object")
            continue
        unknown = sorted(set(obj) - set(RECORD_FIELDS))
        if unknown:
            if strict:
                raise ValidationError(
                    f"{source}, line {lineno}: unknown field(s) in strict mode: {', '.join(unknown)}"
                )
            for name in unknown:
                key = (source, name)
                if key not in _warned_fields:
                    _warned_fields.add(key)
                    log.warning("%s: ignoring unknown field %r", source, name)
        cve_id = obj.get("cve_id")
        if not isinstance(cve_id, str) or not CVE_ID_RE.fullmatch(cve_id):
            result.reject(lineno, f"missing or malformed cve id: {cve_id!r}")
            continue
        description = obj.get("description")
        if not isinstance(description, str):
            result.reject(lineno, f"{cve_id}: missing description")
            continue
        raw_cwe = obj.get("nvd_cwe")
        nvd_cwe = None
        if raw_cwe is not None:
            if not isinstance(raw_cwe, str) or CweId.try_parse(raw_cwe) is None:
                result.reject(lineno, f"{cve_id}: invalid nvd_cwe: {raw_cwe!r}")
                continue
            nvd_cwe = CweId.parse(raw_cwe)
        raw_techniques = obj.get("attack_techniques")
        techniques: tuple[str, ...] | None = None
        if raw_techniques is not None:
            if not isinstance(raw_techniques, list) or not all(
                isinstance(t, str) for t in raw_techniques
            ):
                result.reject(lineno, f"{cve_id}: invalid attack_techniques")
                continue
            techniques = tuple(raw_techniques)
        raw_modified = obj.get("last_modified")
        if raw_modified is not None and not isinstance(raw_modified, str):
            result.reject(lineno, f"{cve_id}: invalid last_modified")
            continue
        result.records.append(
            CveRecord(
                cve_id=cve_id,
                description=description,
                nvd_cwe=nvd_cwe,
                last_modified=raw_modified,
                attack_techniques=techniques,
            )
        )
    return result


def record_to_json(record: CveRecord) -> dict:
    return {
        "cve_id": record.cve_id,
        "description": record.description,
        "nvd_cwe": record.nvd_cwe.value if record.nvd_cwe else None,
        "last_modified": record.last_modified,
        "attack_techniques": list(record.attack_techniques)
        if record.attack_techniques is not None
        else None,
    }


def export_records(records: Iterable[CveRecord], path: str | Path) -> None:
    """Write record-jsonl: exactly the five schema fields, UTF-8, LF."""
    with open(path, "wb") as fh:
        for record in records:
            fh.write(dumps_compact(record_to_json(record)).encode("utf-8"))
            fh.write(b"\n")


def write_rejects_report(rejects: Sequence[dict], path: str | Path) -> None:
    write_json(path, list(rejects))


def _modified_rank(value: str | None) -> tuple[int, float | str]:
    """Sortable recency rank; None sorts before every timestamp."""
    if value is None:
        return (0, "")
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        return (1, value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (2, dt.timestamp())


def deduplicate(records: Sequence[CveRecord]) -> list[CveRecord]:
    """Keep one record per cve_id: the latest last_modified, ties going to
    the later record in input order.  Output sorted by (year, sequence)."""
    best: dict[str, CveRecord] = {}
    for record in records:
        current = best.get(record.cve_id)
        if current is None or _modified_rank(record.last_modified) >= _modified_rank(
            current.last_modified
        ):
            best[record.cve_id] = record
    return sorted(best.values(), key=lambda r: cve_sort_key(r.cve_id))


def filter_insufficient(
    records: Sequence[CveRecord], f: DescriptionFilter | None = None
) -> tuple[list[CveRecord], list[CveRecord]]:
    """Partition records into (kept, dropped) by description quality."""
    f = f or DescriptionFilter()
    kept: list[CveRecord] = []
    dropped: list[CveRecord] = []
    for record in records:
        (dropped if f.drops(record) else kept).append(record)
    return kept, dropped
