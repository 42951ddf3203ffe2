"""Shared text-format helpers: float formatting, key=value files, strict CSV reading."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence


class ParseError(ValueError):
    """Raised on malformed input; carries the file and the offending line."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}" if line is None else f"{path}, line {line}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def fmt(x: float) -> str:
    # 17 significant digits round-trips every double exactly
    return format(float(x), ".17g")


def parse_float(text: str, path, line: int, column: str) -> float:
    if text is None or text.strip() == "":
        raise ParseError(path, line, f"missing value in column {column!r}")
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line, f"column {column!r}: cannot parse {text!r} as a number") from None


def read_csv(path, required: Sequence[str] = ()) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    """Read a CSV into (header, [(line_number, row_dict), ...]).

    Rows with the wrong number of cells are rejected with their line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(path, 1, f"missing columns {missing}; header is {header}")
        rows = []
        for cells in reader:
            line = reader.line_num
            if not cells or all(c.strip() == "" for c in cells):
                continue
            if len(cells) != len(header):
                raise ParseError(path, line, f"expected {len(header)} cells, found {len(cells)}")
            rows.append((line, {h: c.strip() for h, c in zip(header, cells)}))
    return header, rows


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(c) if isinstance(c, float) else c for c in row])


def read_key_values(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(path, lineno, f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(path, lineno, "empty key")
        out[key] = value
    return out


def format_key_values(items: dict) -> str:
    lines = []
    for key, value in items.items():
        if isinstance(value, float):
            value = fmt(value)
        elif isinstance(value, (list, tuple)):
            value = ",".join(fmt(v) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_key_values(path, items: dict) -> None:
    Path(path).write_text(format_key_values(items))


def parse_float_list(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]
