"""Small file helpers shared by the CSV/JSON writers."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


class CsvFormatError(ValueError):
    """Raised when an input CSV is malformed. Carries the 1-based line number."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return atomic_write_text(path, buf.getvalue())


def read_csv(path, required: Sequence[str], types=float) -> list[dict]:
    """Read a headed CSV, checking columns and converting the required fields.

    ``types`` is either a single callable or a mapping of column -> callable.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(path, 1, "empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise CsvFormatError(path, 1, f"missing columns {missing}")
        idx = {c: header.index(c) for c in header}
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(header):
                raise CsvFormatError(path, lineno, f"expected {len(header)} fields, got {len(raw)}")
            row = {"_line": lineno}
            for c in header:
                cell = raw[idx[c]].strip()
                conv = types.get(c, str) if isinstance(types, dict) else (types if c in required else str)
                try:
                    row[c] = conv(cell)
                except ValueError:
                    raise CsvFormatError(path, lineno, f"bad value {cell!r} for column {c!r}") from None
            rows.append(row)
    return rows


def fmt(x: float, digits: int = 17) -> str:
    """Format a float with ``digits`` significant digits (17 round-trips float64)."""
    return format(float(x), f".{digits}g")
