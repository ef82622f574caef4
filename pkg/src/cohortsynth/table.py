"""Numeric user tables and their CSV representation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# Column order shared by every CSV export.
CANONICAL_COLUMNS = (
    "location",
    "protected",
    "verified",
    "followers_count",
    "friends_count",
    "listed_count",
    "favourites_count",
    "statuses_count",
    "account_age_days",
    "geo_enabled",
    "default_profile",
    "default_profile_image",
)

BOOLEAN_COLUMNS = frozenset(
    {
        "location",
        "protected",
        "verified",
        "geo_enabled",
        "default_profile",
        "default_profile_image",
    }
)

COUNT_COLUMNS = (
    "followers_count",
    "friends_count",
    "listed_count",
    "favourites_count",
    "statuses_count",
)


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows are users, columns are named numeric attributes."""

    values: np.ndarray
    columns: tuple[str, ...]
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {values.shape}")
        if values.shape[1] != len(self.columns):
            raise ValueError(
                f"{values.shape[1]} value columns but {len(self.columns)} names"
            )
        if self.ids is not None and len(self.ids) != values.shape[0]:
            raise ValueError("ids length does not match row count")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise KeyError(f"unknown columns: {', '.join(missing)}")
        idx = [self.columns.index(n) for n in names]
        return FeatureMatrix(self.values[:, idx], tuple(names), self.ids)

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        ids = None if self.ids is None else tuple(np.asarray(self.ids, dtype=object)[rows])
        return FeatureMatrix(self.values[rows], self.columns, ids)


def _format_number(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def write_table_csv(
    path: str | Path,
    table: FeatureMatrix,
    extra: dict[str, Sequence] | None = None,
    id_column: str = "user_id",
) -> None:
    """Write a table with an id column first; integral values print without a decimal point."""
    extra = extra or {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ([id_column] if table.ids is not None else []) + list(table.columns) + list(extra)
    writer.writerow(header)
    for i in range(table.n_rows):
        row = [table.ids[i]] if table.ids is not None else []
        row.extend(_format_number(v) for v in table.values[i])
        row.extend(str(col[i]) for col in extra.values())
        writer.writerow(row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_table_csv(
    path: str | Path, id_column: str = "user_id", drop: Sequence[str] = ()
) -> tuple[FeatureMatrix, dict[str, list[str]]]:
    """Read a CSV written by :func:`write_table_csv`.

    Returns the numeric table and a dict of the dropped (non-numeric) columns.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        rows = list(reader)
    has_id = id_column in header
    dropped = {name: [] for name in drop if name in header}
    numeric_idx = [
        i for i, name in enumerate(header) if name != id_column and name not in dropped
    ]
    ids = []
    values = np.empty((len(rows), len(numeric_idx)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r + 2} has {len(row)} fields, expected {len(header)}")
        if has_id:
            ids.append(row[header.index(id_column)])
        for name in dropped:
            dropped[name].append(row[header.index(name)])
        values[r] = [float(row[i]) for i in numeric_idx]
    table = FeatureMatrix(
        values, tuple(header[i] for i in numeric_idx), tuple(ids) if has_id else None
    )
    return table, dropped


def write_assignments_csv(path: str | Path, ids: Sequence[str], labels: Sequence[int]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["user_id", "cluster"])
    for uid, lab in zip(ids, labels):
        writer.writerow([uid, int(lab)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_assignments_csv(path: str | Path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {row["user_id"]: int(row["cluster"]) for row in reader}
