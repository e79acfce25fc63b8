"""CSV and JSON writers with deterministic formatting."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return str(x)  # JSON has no literal for these
        return x
    return x


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, obj) -> Path:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")
    return Path(path)


def _cell(v) -> str:
    v = _plain(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    return str(v)


def dumps_csv(rows: Iterable[dict], fields: Optional[Sequence[str]] = None) -> str:
    """RFC 4180: header row, CRLF line ends, quoting where needed, '.' decimal point."""
    rows = list(rows)
    if fields is None:
        fields = []
        for r in rows:
            fields.extend(k for k in r if k not in fields)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(f, "")) for f in fields])
    return buf.getvalue()


def write_csv(path: Path, rows: Iterable[dict], fields: Optional[Sequence[str]] = None) -> Path:
    Path(path).write_bytes(dumps_csv(rows, fields).encode("utf-8"))
    return Path(path)
