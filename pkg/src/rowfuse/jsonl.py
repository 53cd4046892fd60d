"""Line-delimited JSON record files (one record per line, UTF-8)."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator


class RecordError(ValueError):
    """A malformed record; message carries file path and line number."""


def read_records(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (line_number, record) pairs; line numbers are 1-based.

    Blank lines are skipped. Raises RecordError naming the offending line
    on malformed JSON or a non-object record.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise RecordError(f"{path}:{lineno}: record is not a JSON object")
            yield lineno, record


def write_records(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    """Write records as one JSON object per line, atomically.

    Keys are emitted in sorted order so identical records produce
    byte-identical files.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False))
            fh.write("\n")
    os.replace(tmp, path)
