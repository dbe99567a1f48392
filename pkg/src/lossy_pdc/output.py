"""Deterministic CSV and JSON emission with a metadata header."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    if x is None:
        return ""
    return FLOAT_FMT % float(x)


def metadata_lines(meta: dict) -> list[str]:
    return [f"# {k}: {v if not isinstance(v, float) else fmt(v)}" for k, v in meta.items()]


def _atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: Optional[dict] = None) -> Path:
    lines = metadata_lines(meta or {})
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return _atomic_write(path, "\n".join(lines) + "\n")


def write_matrix_csv(path, corner: str, row_axis, col_axis, matrix, meta: Optional[dict] = None) -> Path:
    """First line holds the column axis, first column the row axis."""
    lines = metadata_lines(meta or {})
    lines.append(",".join([corner] + [fmt(c) for c in col_axis]))
    for x, row in zip(row_axis, np.asarray(matrix)):
        lines.append(",".join([fmt(x)] + [fmt(v) for v in row]))
    return _atomic_write(path, "\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return _atomic_write(path, dumps(obj))


def read_csv(path) -> tuple[dict, list[str], np.ndarray]:
    """Parse a file written by :func:`write_csv` into (metadata, columns, data)."""
    meta, columns, rows = {}, None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        elif columns is None:
            columns = line.split(",")
        elif line:
            rows.append([float(v) if v else np.nan for v in line.split(",")])
    return meta, columns or [], np.array(rows, dtype=float)
