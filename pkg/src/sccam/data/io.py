"""CSV ingestion/export of raw series and the binary dataset cache.

CSV conventions: UTF-8, comma-delimited, '.' decimal point. A first line with
a non-empty, non-numeric value cell is a header. In the ``variables-as-rows``
layout a non-numeric first column carries variable names, and a first line
whose name cell reads ``variable`` is a header even when its remaining cells
are numeric time indices. In the ``variables-as-columns`` layout the header
carries the names.

The dataset cache stores one scenario (train and test windows plus metadata)
in the container described in :mod:`sccam.binfmt`, with magic ``SCCAMDS1``
and arrays ``train.data`` (N x H x W, f8), ``train.labels`` (N, i8),
``test.data`` and ``test.labels``.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from .. import binfmt
from ..errors import ConfigError, DataError
from .series import RawSeries, WindowSet

SCHEMAS = ("variables-as-rows", "variables-as-columns")
NAME_HEADER = "variable"
DATASET_MAGIC = b"SCCAMDS1"
DATASET_VERSION = 1


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, schema: str = "variables-as-rows", label: Optional[int] = None,
             series_id: Optional[str] = None) -> RawSeries:
    if schema not in SCHEMAS:
        raise ConfigError(f"unknown CSV schema {schema!r}; expected one of {SCHEMAS}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")

    first = rows[0]
    # a names column in the row layout: every row below the first starts with a non-numeric cell
    body = rows[1:] or rows
    name_col = schema == "variables-as-rows" and all(r and not _is_number(r[0].strip()) for r in body)
    start = 1 if name_col else 0
    header = None
    labelled = any(c.strip() and not _is_number(c.strip()) for c in first[start:])
    if labelled or (name_col and first[0].strip().lower() == NAME_HEADER):
        header, rows = first, rows[1:]
    if not rows:
        raise DataError(f"{path}: header only, no data rows")

    width = len(rows[0])
    names, values = [], []
    for r, row in enumerate(rows, start=2 if header else 1):
        if len(row) != width:
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {width}")
        cells = row[start:]
        if name_col:
            names.append(row[0].strip())
        parsed = []
        for c, cell in enumerate(cells, start=start + 1):
            text = cell.strip()
            if not text:
                raise DataError(f"{path}: missing value at row {r}, column {c}")
            try:
                v = float(text)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {text!r} at row {r}, column {c}") from None
            if not np.isfinite(v):
                raise DataError(f"{path}: non-finite value at row {r}, column {c}")
            parsed.append(v)
        values.append(parsed)
    arr = np.array(values, dtype=np.float64)
    if schema == "variables-as-columns":
        arr = arr.T
        names = [h.strip() for h in header] if header else []
    if len(names) != arr.shape[0]:
        names = [f"X{i + 1}" for i in range(arr.shape[0])]
    if arr.shape[1] < 1:
        raise DataError(f"{path}: no timesteps")
    return RawSeries(names, arr, label, series_id if series_id is not None else path.stem)


def write_csv(series: RawSeries, path, schema: str = "variables-as-rows") -> None:
    """Write with a header and names so :func:`load_csv` recovers the series exactly (repr floats)."""
    if schema not in SCHEMAS:
        raise ConfigError(f"unknown CSV schema {schema!r}; expected one of {SCHEMAS}")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if schema == "variables-as-rows":
            w.writerow([NAME_HEADER] + [str(t) for t in range(series.length)])
            for name, row in zip(series.variables, series.values):
                w.writerow([name] + [repr(float(v)) for v in row])
        else:
            w.writerow(series.variables)
            for col in series.values.T:
                w.writerow([repr(float(v)) for v in col])


def save_dataset(path, train: WindowSet, test: WindowSet, meta: dict) -> bytes:
    blob = binfmt.pack(DATASET_MAGIC, DATASET_VERSION, {"meta": meta}, {
        "train.data": train.data, "train.labels": train.labels,
        "test.data": test.data, "test.labels": test.labels,
    })
    Path(path).write_bytes(blob)
    return blob


def load_dataset(path) -> tuple[WindowSet, WindowSet, dict]:
    header, arrays = binfmt.unpack(Path(path).read_bytes(), DATASET_MAGIC, DATASET_VERSION)
    train = WindowSet(arrays["train.data"], arrays["train.labels"])
    test = WindowSet(arrays["test.data"], arrays["test.labels"])
    return train, test, header["meta"]
