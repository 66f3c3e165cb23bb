"""CSV / JSON writers. Every file carries the config hash and seed.

CSV files start with ``#`` metadata lines; everything after them (the body)
depends only on the data, so identical runs give byte-identical bodies.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def csv_body(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = "".join(f"# {k}={_fmt(v)}\n" for k, v in meta.items())
    path.write_text(lines + csv_body(header, rows))
    return path


def read_csv_body(path) -> str:
    return "".join(line for line in Path(path).read_text().splitlines(keepends=True)
                   if not line.startswith("#"))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else str(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path, payload: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": _jsonable(meta), **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def trace_rows(trace, window: int):
    from .flowsim import moving_average

    total = trace.total[:-1]
    ma = moving_average(total, window)
    if ma.shape[0] != total.shape[0]:
        ma = np.full(total.shape[0], ma[0])
    for t in range(total.shape[0]):
        yield (t, *trace.x[t].tolist(), int(total[t]), float(ma[t]))


def trace_header(K: int) -> list:
    return ["slot", *[f"X_{k + 1}" for k in range(K)], "sum", "moving_avg"]
