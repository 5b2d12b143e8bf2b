"""CWE hierarchy graph: parsing, ancestor queries, and equivalence checks.

Only the ChildOf relation is modeled.  A taxonomy is immutable after
construction, so concurrent read queries are safe.
"""

from __future__ import annotations

import csv
import io
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Mapping

from .errors import ParseError, TaxonomyCycleError
from .jsonio import read_bytes, source_name

_CWE_ID_RE = re.compile(r"CWE-([1-9][0-9]*)\Z")

EDGE_CSV_HEADER = ("child", "parent", "child_name")

TAXONOMY_FORMATS = ("cwe-xml-subset", "edge-csv")


@dataclass(frozen=True, order=True)
class CweId:
    """A CWE identifier; ordering and equality are by numeric component."""

    number: int

    def __post_init__(self) -> None:
        if not isinstance(self.number, int) or self.number <= 0:
            raise ValueError(f"CWE number must be a positive integer, got {self.number!r}")

    @property
    def value(self) -> str:
        return f"CWE-{self.number}"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "CweId":
        """Parse the canonical "CWE-<n>" form (no leading zeros)."""
        match = _CWE_ID_RE.fullmatch(text.strip())
        if match is None:
            raise ValueError(f"not a canonical CWE id: {text!r}")
        return cls(int(match.group(1)))

    @classmethod
    def try_parse(cls, text: str) -> "CweId | None":
        try:
            return cls.parse(text)
        except ValueError:
            return None


@dataclass(frozen=True)
class CweNode:
    id: CweId
    name: str = ""
    parents: frozenset[CweId] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.id in self.parents:
            raise ValueError(f"{self.id} lists itself as parent")


@dataclass(frozen=True)
class CweTaxonomy:
    """Directed acyclic ChildOf graph plus the target-class vocabulary."""

    nodes: Mapping[CweId, CweNode]
    vocabulary: tuple[CweId, ...] = ()

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[CweId, CweId]],
        names: Mapping[CweId, str] | None = None,
        vocabulary: Iterable[CweId] = (),
    ) -> "CweTaxonomy":
        """Build a taxonomy from (child, parent) pairs; rejects cycles."""
        names = dict(names or {})
        parents: dict[CweId, set[CweId]] = {}
        for child, parent in edges:
            if child == parent:
                raise TaxonomyCycleError([child, parent])
            parents.setdefault(child, set()).add(parent)
            parents.setdefault(parent, set())
        for cid in names:
            parents.setdefault(cid, set())
        _check_acyclic(parents)
        nodes = {
            cid: CweNode(id=cid, name=names.get(cid, ""), parents=frozenset(ps))
            for cid, ps in parents.items()
        }
        return cls(nodes=nodes, vocabulary=tuple(vocabulary))

    def with_vocabulary(self, vocabulary: Iterable[CweId]) -> "CweTaxonomy":
        return replace(self, vocabulary=tuple(vocabulary))

    def __contains__(self, cwe: CweId) -> bool:
        return cwe in self.nodes

    def ancestors(self, cwe: CweId, depth: int) -> set[CweId]:
        """Ids reachable via 1..depth ChildOf edges upward; excludes `cwe`.

        Absent ids have no relatives and yield the empty set.
        """
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        found: set[CweId] = set()
        frontier = {cwe}
        for _ in range(depth):
            step: set[CweId] = set()
            for cid in frontier:
                node = self.nodes.get(cid)
                if node is not None:
                    step.update(node.parents)
            step -= found
            if not step:
                break
            found.update(step)
            frontier = step
        found.discard(cwe)
        return found

    def is_hierarchy_equivalent(self, pred: CweId, truth: CweId, depth: int = 1) -> bool:
        """True when the two ids are equal or within `depth` ChildOf hops.

        Symmetric by construction; absent ids are equivalent only to
        themselves.  The relation is deliberately not transitive.
        """
        if pred == truth:
            return True
        return truth in self.ancestors(pred, depth) or pred in self.ancestors(truth, depth)

    def validate_vocabulary(self, vocab: Iterable[CweId] | None = None) -> list[CweId]:
        """Vocabulary entries with no node in the graph, in input order."""
        entries = self.vocabulary if vocab is None else tuple(vocab)
        return [v for v in entries if v not in self.nodes]

    def to_edge_csv(self) -> str:
        """Canonical edge-csv export: LF endings, rows sorted by numeric
        child id then parent id.  Captures edges only; isolated nodes do not
        appear (the reachability relation is unaffected)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(EDGE_CSV_HEADER)
        rows = []
        for node in self.nodes.values():
            for parent in node.parents:
                rows.append((node.id.number, parent.number, node.name))
        for child_num, parent_num, name in sorted(rows):
            writer.writerow([f"CWE-{child_num}", f"CWE-{parent_num}", name])
        return buf.getvalue()


def _check_acyclic(parents: Mapping[CweId, set[CweId]]) -> None:
    """Iterative three-color DFS; raises with one concrete cycle."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {cid: WHITE for cid in parents}
    for root in parents:
        if color[root] != WHITE:
            continue
        stack: list[tuple[CweId, Iterable[CweId]]] = [(root, iter(sorted(parents[root])))]
        color[root] = GRAY
        path = [root]
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color.get(nxt, WHITE) == GRAY:
                    cycle = path[path.index(nxt):] + [nxt]
                    raise TaxonomyCycleError(cycle)
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GRAY
                    path.append(nxt)
                    stack.append((nxt, iter(sorted(parents[nxt]))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                path.pop()
                stack.pop()


def parse_taxonomy(
    source: bytes | str | BinaryIO,
    format: str = "edge-csv",
    vocabulary: Iterable[CweId] = (),
) -> CweTaxonomy:
    """Parse a taxonomy from raw bytes, a path, or a binary stream.

    Formats: "edge-csv" (rows "child_id,parent_id[,child_name]", optional
    "child,parent,child_name" header) and "cwe-xml-subset" (MITRE catalog
    XML; only Weakness ID, Name, and ChildOf relations are read).
    """
    name = source_name(source)
    data = read_bytes(source)
    if format == "edge-csv":
        edges, names = _parse_edge_csv(data, name)
    elif format == "cwe-xml-subset":
        edges, names = _parse_cwe_xml(data, name)
    else:
        raise ValueError(f"unknown taxonomy format: {format!r}")
    return CweTaxonomy.from_edges(edges, names, vocabulary)


def _parse_edge_csv(
    data: bytes, source: str
) -> tuple[list[tuple[CweId, CweId]], dict[CweId, str]]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8: {exc}", source=source) from exc
    edges: list[tuple[CweId, CweId]] = []
    names: dict[CweId, str] = {}
    lines = text.split("\n")
    reader = csv.reader(lines)
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if lineno == 1 and [c.lower() for c in cells[:2]] == ["child", "parent"]:
            continue
        if len(cells) < 2:
            raise ParseError(
                f"expected child,parent[,child_name], got {len(cells)} field(s)",
                source=source,
                line=lineno,
            )
        child = _parse_id_token(cells[0], source, lineno, lines[lineno - 1])
        parent = _parse_id_token(cells[1], source, lineno, lines[lineno - 1])
        edges.append((child, parent))
        if len(cells) >= 3 and cells[2]:
            names[child] = cells[2]
    return edges, names


def _parse_id_token(token: str, source: str, lineno: int, raw_line: str) -> CweId:
    cwe = CweId.try_parse(token)
    if cwe is None:
        offset = raw_line.find(token)
        raise ParseError(
            f"malformed CWE id token {token!r}",
            source=source,
            line=lineno,
            offset=offset if offset >= 0 else None,
        )
    return cwe


def _local_tag(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_cwe_xml(
    data: bytes, source: str
) -> tuple[list[tuple[CweId, CweId]], dict[CweId, str]]:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, offset = exc.position if exc.position else (None, None)
        raise ParseError(f"malformed XML: {exc.msg}", source=source, line=line, offset=offset) from exc
    edges: list[tuple[CweId, CweId]] = []
    names: dict[CweId, str] = {}
    for elem in root.iter():
        if _local_tag(elem.tag) != "Weakness":
            continue
        raw_id = elem.get("ID", "")
        cwe = CweId.try_parse(f"CWE-{raw_id}")
        if cwe is None:
            raise ParseError(f"malformed Weakness ID attribute {raw_id!r}", source=source)
        names[cwe] = elem.get("Name", "")
        for rel in elem.iter():
            if _local_tag(rel.tag) != "Related_Weakness":
                continue
            if rel.get("Nature") != "ChildOf":
                continue
            raw_parent = rel.get("CWE_ID", "")
            parent = CweId.try_parse(f"CWE-{raw_parent}")
            if parent is None:
                raise ParseError(
                    f"malformed ChildOf CWE_ID attribute {raw_parent!r} on {cwe}",
                    source=source,
                )
            edges.append((cwe, parent))
    return edges, names


def load_vocabulary(source: bytes | str | BinaryIO) -> tuple[CweId, ...]:
    """Plain-text class list: one CWE id per line, '#' starts a comment.

    Order is preserved; repeats are rejected.
    """
    name = source_name(source)
    text = read_bytes(source).decode("utf-8")
    vocab: list[CweId] = []
    seen: set[CweId] = set()
    for lineno, line in enumerate(text.split("\n"), start=1):
        entry = line.split("#", 1)[0].strip()
        if not entry:
            continue
        cwe = _parse_id_token(entry, name, lineno, line)
        if cwe in seen:
            raise ParseError(f"repeated vocabulary entry {cwe}", source=name, line=lineno)
        seen.add(cwe)
        vocab.append(cwe)
    return tuple(vocab)
