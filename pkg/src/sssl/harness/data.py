"""CSV ingestion and export for the experiment harness."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..kernels import Dataset

DELIMITERS = ",;\t"


class DataError(ValueError):
    pass


def _sniff_delimiter(header: str) -> str:
    counts = {d: header.count(d) for d in DELIMITERS}
    best = max(counts, key=lambda d: counts[d])
    return best if counts[best] > 0 else ","


def load_csv(path, target="last") -> Dataset:
    """Read a headed numeric CSV (comma, semicolon or tab separated).

    ``target`` is a column name or ``"last"``. Row order is preserved.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataError(f"{path}: missing header row")
    delim = _sniff_delimiter(lines[0])
    rows = list(csv.reader(io.StringIO(text), delimiter=delim))
    header = [h.strip().strip('"') for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no data rows after the header")
    if target == "last":
        t = len(header) - 1
    elif target in header:
        t = header.index(target)
    else:
        raise DataError(f"{path}: target column {target!r} not found in header {header}")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {cell!r} at row {i + 2}, column {j + 1} ({header[j]})"
                ) from None
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: non-finite value at row {bad[0] + 2}, column {bad[1] + 1}")
    feats = [j for j in range(len(header)) if j != t]
    if not feats:
        raise DataError(f"{path}: no feature columns besides the target")
    names = tuple(header[j] for j in feats)
    return Dataset(values[:, feats], values[:, t], feature_names=names)


def write_csv(data: Dataset, path, target_name: str = "y") -> None:
    names = list(data.feature_names) or [f"x{j}" for j in range(data.feature_dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ([target_name] if data.labels is not None else []))
        for i in range(data.n_points):
            row = [repr(float(v)) for v in data.points[i]]
            if data.labels is not None:
                row.append(repr(float(data.labels[i])))
            w.writerow(row)
