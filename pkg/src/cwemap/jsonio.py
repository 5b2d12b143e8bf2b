"""Deterministic JSON / JSONL helpers used by every pipeline stage.

All writers emit UTF-8 with LF line endings and no trailing whitespace so
that reruns with identical inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, BinaryIO, Iterable, Iterator

from .errors import ParseError


def read_bytes(source: bytes | str | os.PathLike | BinaryIO) -> bytes:
    """Accept raw bytes, a filesystem path, or a binary file object."""
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes()
    return source.read()


def source_name(source: Any) -> str:
    if isinstance(source, (str, os.PathLike)):
        return str(source)
    return getattr(source, "name", "<bytes>")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_digest(obj: Any) -> str:
    """Digest of an object's canonical JSON form (sorted keys, compact)."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return sha256_bytes(payload.encode("utf-8"))


def dumps_compact(obj: Any) -> str:
    """Compact JSON, insertion-ordered keys (callers fix the field order)."""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_json(path: str | os.PathLike, obj: Any) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False)
    Path(path).write_bytes((text + "\n").encode("utf-8"))


def write_jsonl(path: str | os.PathLike, rows: Iterable[Any]) -> None:
    with open(path, "wb") as fh:
        for row in rows:
            fh.write(dumps_compact(row).encode("utf-8"))
            fh.write(b"\n")


def iter_jsonl(data: bytes, source: str = "<bytes>") -> Iterator[tuple[int, Any]]:
    """Yield (1-based line number, parsed object); blank lines are skipped.

    Malformed JSON raises ParseError carrying the line and in-line offset.
    """
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            yield lineno, json.loads(stripped.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8: {exc}", source=source, line=lineno) from exc
        except json.JSONDecodeError as exc:
            raise ParseError(
                f"malformed JSON: {exc.msg}", source=source, line=lineno, offset=exc.pos
            ) from exc
