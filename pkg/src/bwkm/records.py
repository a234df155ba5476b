"""Trial records and their JSONL / CSV persistence."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA = "bwkm-trial/1"

COLUMNS = (
    "schema", "method", "dataset", "k", "seed", "iter", "distances",
    "weighted_error", "exact_error", "cells", "boundary", "budget",
    "stop_reason", "wall_ms",
)


@dataclass
class IterationRow:
    iteration: int
    distances: int
    weighted_error: float | None
    exact_error: float | None = None
    cells: int | None = None
    boundary: int | None = None


@dataclass
class TrialRecord:
    method: str
    dataset: str
    k: int
    seed: int
    rows: list = field(default_factory=list)
    stop_reason: str = ""
    wall_ms: float | None = field(default=None, compare=False)
    budget: int | None = None
    info: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def distances(self) -> int:
        return self.rows[-1].distances if self.rows else 0

    @property
    def final_error(self) -> float | None:
        return self.rows[-1].exact_error if self.rows else None

    @property
    def key(self) -> tuple:
        return (self.dataset, self.k, self.seed, self.method)

    def validate(self) -> None:
        if not self.rows:
            raise ValueError(f"{self.method}: record has no rows")
        counts = [r.distances for r in self.rows]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError(f"{self.method}: ledger counts not strictly increasing: {counts}")
        if not self.stop_reason:
            raise ValueError(f"{self.method}: missing stop reason")

    def to_dicts(self, include_timing: bool = False) -> list[dict]:
        wall = self.wall_ms if include_timing else None
        return [
            {
                "schema": SCHEMA,
                "method": self.method,
                "dataset": self.dataset,
                "k": self.k,
                "seed": self.seed,
                "iter": r.iteration,
                "distances": r.distances,
                "weighted_error": r.weighted_error,
                "exact_error": r.exact_error,
                "cells": r.cells,
                "boundary": r.boundary,
                "budget": self.budget,
                "stop_reason": self.stop_reason,
                "wall_ms": wall,
            }
            for r in self.rows
        ]


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def dumps_jsonl(records, include_timing: bool = False) -> str:
    out = io.StringIO()
    for rec in records:
        for row in rec.to_dicts(include_timing):
            out.write(json.dumps({k: _clean(row[k]) for k in COLUMNS}, sort_keys=False))
            out.write("\n")
    return out.getvalue()


def loads_jsonl(text: str) -> list[TrialRecord]:
    records: dict[tuple, TrialRecord] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        row = json.loads(line)
        if row.get("schema") != SCHEMA:
            raise ValueError(f"line {lineno}: unknown schema {row.get('schema')!r}")
        key = (row["dataset"], row["k"], row["seed"], row["method"])
        rec = records.get(key)
        if rec is None:
            rec = records[key] = TrialRecord(
                method=row["method"], dataset=row["dataset"], k=row["k"], seed=row["seed"],
                stop_reason=row["stop_reason"], wall_ms=row["wall_ms"], budget=row["budget"],
            )
        rec.rows.append(IterationRow(
            iteration=row["iter"], distances=row["distances"],
            weighted_error=row["weighted_error"], exact_error=row["exact_error"],
            cells=row["cells"], boundary=row["boundary"],
        ))
    return list(records.values())


def dumps_csv(records, include_timing: bool = False) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for rec in records:
        for row in rec.to_dicts(include_timing):
            w.writerow({k: "" if _clean(row[k]) is None else _clean(row[k]) for k in COLUMNS})
    return out.getvalue()


def write_records(records, path, include_timing: bool = False) -> tuple[Path, Path]:
    """Write ``<path>.jsonl`` and ``<path>.csv``; returns both paths."""
    path = Path(path)
    jsonl = path.with_suffix(".jsonl")
    csv_path = path.with_suffix(".csv")
    jsonl.parent.mkdir(parents=True, exist_ok=True)
    jsonl.write_text(dumps_jsonl(records, include_timing))
    csv_path.write_text(dumps_csv(records, include_timing))
    return jsonl, csv_path


def read_records(path) -> list[TrialRecord]:
    return loads_jsonl(Path(path).read_text())
