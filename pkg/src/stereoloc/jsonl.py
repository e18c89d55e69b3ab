"""Minimal JSON Lines helpers with line-numbered errors."""

import json
from pathlib import Path

from .errors import DataError


def write_jsonl(path, records):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path, parse=None):
    """Yield records from ``path``; ``parse`` converts each decoded dict.

    Any exception raised by ``parse`` (KeyError, TypeError, ValueError) is
    re-raised as a DataError carrying the 1-based line number.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield parse(rec) if parse is not None else rec
            except DataError as exc:
                if exc.line is None:
                    raise DataError(str(exc), line=lineno) from exc
                raise
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{type(exc).__name__}: {exc}", line=lineno) from exc
