"""Sample CSV and matrix IO.

Samples are one row per observation, ``.`` as decimal mark, optional header
row (detected when the first row does not parse as numbers).  Output floats
use 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["ParseError", "fmt", "read_samples", "write_csv", "write_matrix"]


class ParseError(ValueError):
    code = "PARSE_ERROR"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_row(row: Sequence[str]) -> list[float] | None:
    try:
        return [float(v) for v in row]
    except ValueError:
        return None


def read_samples(path: str | Path, p: int | None = None) -> np.ndarray:
    """Read a numeric CSV into an ``(n, p)`` array.

    Raises:
        ParseError: a non-numeric field or a ragged row, reported with its
            1-based line number.
    """
    text = Path(path).read_text()
    rows: list[list[float]] = []
    width = p
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not v.strip() for v in row):
            continue
        vals = _parse_row(row)
        if vals is None:
            if lineno == 1 and not rows:
                continue  # header
            bad = next(v for v in row if _parse_row([v]) is None)
            raise ParseError(f"{path}:{lineno}: cannot parse {bad!r} as a number")
        if width is None:
            width = len(vals)
        if len(vals) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} fields, found {len(vals)}")
        rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def write_csv(path: str | Path | None, header: Sequence[str] | None, rows: Iterable[Sequence], out=None) -> None:
    """Write rows (floats formatted with 17 significant digits) to ``path`` or ``out``."""
    lines = []
    if header:
        lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else str(v) if isinstance(v, (int, np.integer)) else fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path is None:
        out.write(text)
    else:
        Path(path).write_text(text)


def write_matrix(path: str | Path, a: np.ndarray) -> None:
    write_csv(path, None, np.atleast_2d(a).tolist())
