"""Delimited data files and result documents.

Data files have a header ``left,right[,z_*...][,x_*...]``.  An empty right
field, ``inf`` or ``Inf`` marks right censoring; ``left == right`` is exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Union

import numpy as np

from .model import ModelError, SurvivalData

PathLike = Union[str, Path]

_INF_TOKENS = {"", "inf", "Inf", "INF", "+inf", "Infinity", "infinity"}


class DataFileError(ValueError):
    """Malformed data file; the message carries the offending line number."""


def _number(token: str, line: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataFileError(f"line {line}: column {column!r}: not a number: {token!r}") from None
    if math.isnan(value):
        raise DataFileError(f"line {line}: column {column!r}: NaN is not allowed")
    return value


def read_data(path: PathLike, delimiter: str = ",") -> SurvivalData:
    """Read a data file into :class:`SurvivalData`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFileError("line 1: empty file") from None
        if len(header) < 2 or header[0] != "left" or header[1] != "right":
            raise DataFileError("line 1: header must start with 'left,right'")
        extra = header[2:]
        bad = [h for h in extra if not (h.startswith("z_") or h.startswith("x_"))]
        if bad:
            raise DataFileError(f"line 1: unknown columns {bad}; covariates must be named z_* or x_*")
        z_cols = [i for i, h in enumerate(extra) if h.startswith("z_")]
        x_cols = [i for i, h in enumerate(extra) if h.startswith("x_")]
        left, right, cov = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFileError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            lo = _number(row[0].strip(), line, "left")
            tok = row[1].strip()
            hi = math.inf if tok in _INF_TOKENS else _number(tok, line, "right")
            if lo < 0 or hi < lo or math.isinf(lo):
                raise DataFileError(f"line {line}: need 0 <= left <= right, got ({lo}, {hi})")
            if lo == hi == 0:
                raise DataFileError(f"line {line}: exact event time must be positive")
            left.append(lo)
            right.append(hi)
            cov.append([_number(row[2 + j].strip(), line, extra[j]) for j in range(len(extra))])
    if not left:
        raise DataFileError("no data rows")
    cov = np.array(cov, dtype=float).reshape(len(left), len(extra))
    z = cov[:, z_cols]
    x = cov[:, x_cols] if x_cols else None
    try:
        return SurvivalData(
            np.array(left),
            np.array(right),
            z,
            x,
            [extra[i] for i in z_cols],
            [extra[i] for i in x_cols] if x_cols else None,
        )
    except ModelError as exc:
        raise DataFileError(str(exc)) from None


def write_data(data: SurvivalData, path: PathLike, delimiter: str = ",") -> None:
    """Write ``data`` so that :func:`read_data` reproduces it exactly."""
    z_names = list(data.z_names or [f"z_{j + 1}" for j in range(data.d_z)])
    x_names = []
    if data.x is not None:
        x_names = list(data.x_names or [f"x_{j + 1}" for j in range(data.x.shape[1])])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["left", "right", *z_names, *x_names])
        for i in range(data.n):
            row = [repr(float(data.left[i])), "inf" if np.isinf(data.right[i]) else repr(float(data.right[i]))]
            row += [repr(float(v)) for v in data.z[i]]
            if data.x is not None:
                row += [repr(float(v)) for v in data.x[i]]
            w.writerow(row)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(doc: dict, path: PathLike) -> None:
    """Deterministic JSON (sorted keys); non-finite floats become strings."""
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def write_table(rows: list, path: PathLike, delimiter: str = "\t") -> None:
    """Columnar text table from a list of flat dicts; lists are joined with ``;``."""
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            out = []
            for c in cols:
                v = r[c]
                if isinstance(v, (list, tuple, np.ndarray)):
                    v = ";".join(repr(float(u)) for u in v)
                elif isinstance(v, float):
                    v = repr(v)
                out.append(v)
            w.writerow(out)
