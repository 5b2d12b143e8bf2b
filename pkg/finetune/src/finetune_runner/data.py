"""Split-file I/O: labeled CVE records, one JSON object per line.

The on-disk shape is shared with the dataset toolkit: {"cve_id",
"description", "label"}.  Extra keys are tolerated so enriched exports
keep working; the three core fields are validated strictly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

CVE_ID_RE = re.compile(r"CVE-\d{4}-\d{4,}\Z", re.IGNORECASE)
CWE_ID_RE = re.compile(r"CWE-[1-9][0-9]*\Z")


@dataclass(frozen=True)
class Example:
    """One record; label is None only when read with require_label=False."""

    cve_id: str
    text: str
    label: str | None = None


def cve_sort_key(cve_id: str) -> tuple[int, int]:
    """Numeric (year, sequence) order; differs from string order when
    sequence numbers have different widths."""
    _, year, seq = cve_id.split("-")
    return (int(year), int(seq))


def cwe_number(cwe_id: str) -> int:
    return int(cwe_id.split("-", 1)[1])


def read_examples(path: str | Path, *, require_label: bool = True) -> list[Example]:
    """Parse a split file; raises DataError with the offending line number."""
    path = Path(path)
    out: list[Example] = []
    for lineno, raw in enumerate(path.read_bytes().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise DataError(f"{path}:{lineno}: expected a JSON object")
        cve_id = obj.get("cve_id")
        if not isinstance(cve_id, str) or not CVE_ID_RE.fullmatch(cve_id.strip()):
            raise DataError(f"{path}:{lineno}: invalid cve_id {cve_id!r}")
        text = obj.get("description")
        if not isinstance(text, str) or not text.strip():
            raise DataError(f"{path}:{lineno}: description must be a non-empty string")
        label = obj.get("label")
        if label is None:
            if require_label:
                raise DataError(f"{path}:{lineno}: missing label")
        elif not isinstance(label, str) or not CWE_ID_RE.fullmatch(label):
            raise DataError(f"{path}:{lineno}: invalid label {label!r}")
        out.append(Example(cve_id.strip().upper(), text, label))
    if not out:
        raise DataError(f"{path}: no records")
    return out
