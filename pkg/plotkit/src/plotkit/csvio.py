"""Readers for the experiment CSV reports.

All report formats share the same layout: one header line naming the
columns, one data row per line, and optional trailer comments starting
with ``#`` (e.g. a trajectory's ``# status=ok``). Columns are matched by
name, so reports may carry extra columns beyond the required ones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError


@dataclass(frozen=True)
class Table:
    """One parsed CSV file: header names plus string-valued rows."""

    path: Path
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def column(self, name: str) -> list[str]:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def floats(self, name: str) -> np.ndarray:
        try:
            return np.array([float(v) for v in self.column(name)], dtype=float)
        except ValueError as exc:
            raise SchemaError(
                f"{self.path}: column '{name}' holds a non-numeric value ({exc})"
            ) from None


def read_table(path: str | Path) -> Table:
    """Parse a report CSV, skipping ``#`` trailer comments and blank lines."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from None

    header: tuple[str, ...] | None = None
    rows: list[tuple[str, ...]] = []
    for record in csv.reader(text.splitlines()):
        if not record or not any(field.strip() for field in record):
            continue
        if record[0].lstrip().startswith("#"):
            continue
        if header is None:
            header = tuple(name.strip() for name in record)
            continue
        if len(record) != len(header):
            raise SchemaError(
                f"{path}: row has {len(record)} fields, header has {len(header)}"
            )
        rows.append(tuple(field.strip() for field in record))

    if header is None:
        raise SchemaError(f"{path}: no header line")
    return Table(path=path, columns=header, rows=tuple(rows))


def require_columns(table: Table, names: tuple[str, ...], kind: str) -> None:
    for name in names:
        if name not in table.columns:
            raise SchemaError(
                f"{table.path}: missing column '{name}' "
                f"(a {kind} input needs: {', '.join(names)})"
            )


def require_rows(table: Table) -> None:
    if not table.rows:
        raise SchemaError(f"{table.path}: no data rows")
