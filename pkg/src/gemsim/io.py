"""CSV/JSON serialisation with atomic writes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def write_matrix_csv(path, matrix) -> Path:
    buf = io.StringIO()
    np.savetxt(buf, np.asarray(matrix, dtype=float), delimiter=",", fmt="%.10g")
    return atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple:
    """Return ``(header, columns)`` where columns maps name -> float array.

    A file without a header row gets column names ``c0, c1, ...``.
    """
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    try:
        [float(v) for v in rows[0]]
        header = [f"c{i}" for i in range(len(rows[0]))]
    except ValueError:
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    if not rows:
        raise ValueError(f"{path}: CSV has a header but no data rows")
    width = len(header)
    data = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != width:
            raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        try:
            data.append([float(v) for v in row])
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from None
    arr = np.array(data, dtype=float)
    return header, {h: arr[:, i] for i, h in enumerate(header)}


def read_series(path) -> tuple:
    """Two-column ``(t_s, value)`` series; returns the first two columns."""
    header, cols = read_csv(path)
    if len(header) < 2:
        raise ValueError(f"{path}: need at least two columns")
    return cols[header[0]], cols[header[1]]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json_text(obj))


def write_keyvalue(path, mapping: dict) -> Path:
    lines = [f"{k}={_fmt(v) if not isinstance(v, str) else v}" for k, v in mapping.items()]
    return atomic_write_text(path, "\n".join(lines) + "\n")
