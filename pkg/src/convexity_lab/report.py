"""JSON reports and trajectory CSV files.

Floats are written with 17 significant digits so every value round-trips
exactly; non-finite floats become ``null``. Keys are emitted in sorted
order, and the only run-dependent fields (tool version, wall clock,
backend) sit in a separate ``envelope`` block.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ParseError
from .trajectory import TrajectoryRecord, loss_change_fraction, trial_percentile

SCHEMA_VERSION = 1
CSV_HEADER = ("t", "loss", "grad_sq", "gamma_dd", "normalized", "boundary_hit")


def fmt_float(x: float) -> str:
    return "%.17g" % x


def _encode(obj, indent: int, level: int, out: list):
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        out.append(fmt_float(x) if math.isfinite(x) else "null")
    elif isinstance(obj, str):
        out.append(_quote(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, k in enumerate(sorted(obj, key=str)):
            out.append(("," if i else "") + pad + _quote(str(k)) + ": ")
            _encode(obj[k], indent, level + 1, out)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(items):
            out.append(("," if i else "") + pad)
            _encode(v, indent, level + 1, out)
        out.append(end + "]")
    elif hasattr(obj, "to_dict"):
        _encode(obj.to_dict(), indent, level, out)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _quote(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def dumps(obj, indent: int = 2) -> str:
    out: list = []
    _encode(obj, indent, 0, out)
    return "".join(out) + "\n"


def make_report(body: dict, envelope: Optional[dict] = None) -> dict:
    return {"schema_version": SCHEMA_VERSION, "envelope": envelope or {}, "report": body}


def write_trajectory_csv(rec: TrajectoryRecord, path) -> None:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for t, f, gsq, gdd, nrm, hit in rec.rows():
        tt = str(int(t)) if rec.kind == "sgd" else fmt_float(t)
        buf.write(",".join([tt, fmt_float(f), fmt_float(gsq), fmt_float(gdd),
                            "" if nrm is None else fmt_float(nrm), "1" if hit else "0"]) + "\n")
    Path(path).write_text(buf.getvalue())


def read_trajectory_csv(path, kind: Optional[str] = None) -> TrajectoryRecord:
    rec = TrajectoryRecord(kind=kind or "flow", meta={"source": str(path)})
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", lineno)
            try:
                t, f, gsq, gdd = (float(v) for v in row[:4])
                hit = row[5].strip() in ("1", "true", "True")
            except ValueError as e:
                raise ParseError(str(e), lineno) from None
            rec.append(t, f, gsq, gdd, hit)
            # keep the stored normalized value verbatim rather than recomputing it
            rec.normalized[-1] = float(row[4]) if row[4].strip() else None
    if not rec.t:
        raise ParseError("no trajectory rows", 2)
    return rec.finalize()


def trial_rows(records: Iterable[TrajectoryRecord], p: float = 10.0) -> list:
    rows = []
    for r in records:
        rows.append({
            "seed": r.meta.get("seed"),
            "t0": r.t0,
            "t1": r.t1,
            "loss_change_fraction": loss_change_fraction(r),
            "normalized_p%g" % p: trial_percentile(r, p),
            "loss_initial": r.loss[0],
            "loss_final": r.loss[-1],
            "boundary_hits": int(sum(r.boundary_hit)),
        })
    return rows
