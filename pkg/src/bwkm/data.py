"""Dataset CSV input and output.

One instance per line, comma-separated reals.  A first line that does not
parse as numbers is treated as a header.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Violation:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass
class ValidationReport:
    n: int
    d: int | None
    header: bool
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.n > 0


def _parse_row(row):
    return [float(v) for v in row]


def _is_header(row) -> bool:
    try:
        _parse_row(row)
    except ValueError:
        return True
    return False


def _rows(text: str):
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, 1):
        cells = [c.strip() for c in row]
        if not cells or all(c == "" for c in cells):
            continue
        yield lineno, cells


def validate_text(text: str) -> ValidationReport:
    """Scan CSV text and report shape plus every offending line."""
    rows = list(_rows(text))
    header = bool(rows) and _is_header(rows[0][1])
    if header:
        rows = rows[1:]
    report = ValidationReport(n=0, d=None, header=header)
    for lineno, cells in rows:
        if report.d is None:
            report.d = len(cells)
        elif len(cells) != report.d:
            report.violations.append(
                Violation(lineno, f"ragged row: {len(cells)} fields, expected {report.d}"))
            report.n += 1
            continue
        try:
            vals = _parse_row(cells)
        except ValueError:
            report.violations.append(Violation(lineno, "non-numeric field"))
            report.n += 1
            continue
        if any(math.isnan(v) for v in vals):
            report.violations.append(Violation(lineno, "NaN value"))
        elif any(math.isinf(v) for v in vals):
            report.violations.append(Violation(lineno, "infinite value"))
        report.n += 1
    if report.n == 0:
        report.violations.append(Violation(0, "empty dataset"))
    return report


def validate_csv(path) -> ValidationReport:
    with open(path, encoding="utf-8") as fh:
        return validate_text(fh.read())


class DataError(ValueError):
    """Dataset content violates the CSV contract."""

    def __init__(self, report: ValidationReport):
        self.report = report
        first = report.violations[0]
        more = len(report.violations) - 1
        super().__init__(str(first) + (f" (+{more} more)" if more else ""))


def load_csv(path) -> np.ndarray:
    """Read a dataset; raises :class:`DataError` on malformed content."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    report = validate_text(text)
    if not report.ok:
        raise DataError(report)
    lines = list(_rows(text))[1 if report.header else 0:]
    rows = [_parse_row(c) for _, c in lines]
    return np.asarray(rows, dtype=float).reshape(report.n, report.d)


def save_csv(path, X, header=None) -> None:
    """Write rows with full float precision so a reload is exact."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        np.savetxt(fh, X, delimiter=",", fmt="%.17g")
