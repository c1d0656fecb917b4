"""Small CSV helpers: a leading ``# comment`` line is written and skipped on read."""

from __future__ import annotations

import csv
import io

from .exceptions import DataError


def write_csv(header, rows, comment: str | None = None) -> str:
    out = io.StringIO()
    if comment is not None:
        out.write(f"# {comment}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def read_csv(text, expected_header=None) -> tuple[list, list]:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError("empty CSV content")
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    if expected_header is not None and header != list(expected_header):
        raise DataError(f"bad CSV header {header!r}; expected {list(expected_header)!r}")
    return header, body
