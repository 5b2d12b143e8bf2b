"""Exception types shared across the toolkit."""

from __future__ import annotations


class CwemapError(Exception):
    """Base class for all toolkit errors."""


class ParseError(CwemapError):
    """Malformed input that cannot be parsed.

    Carries enough location context (source name, line, character offset)
    to point at the offending token.
    """

    def __init__(
        self,
        message: str,
        *,
        source: str | None = None,
        line: int | None = None,
        offset: int | None = None,
    ) -> None:
        self.source = source
        self.line = line
        self.offset = offset
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class TaxonomyCycleError(CwemapError):
    """The ChildOf relation contains a cycle; carries one offending cycle."""

    def __init__(self, cycle: list) -> None:
        self.cycle = list(cycle)
        path = " -> ".join(str(c) for c in self.cycle)
        super().__init__(f"ChildOf cycle detected: {path}")


class ValidationError(CwemapError):
    """A contract violation in otherwise well-formed input."""


class TrainingDivergedError(CwemapError):
    """Optimization produced a non-finite loss."""
