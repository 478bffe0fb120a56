"""CSV and JSON readers/writers for observations, draws and summaries.

Readers check the header exactly (an optional trailing ``individual`` column
is allowed in individual-record files) and report bad fields with the line
number they occur on.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from pathlib import Path

import numpy as np

from .domain import (
    EfficientLayout,
    GeneralLayout,
    IdealLayout,
    IndividualObservations,
    IndividualRecord,
    PooledObservations,
    TimeGrid,
)
from .summary import CurveSummary

HEADERS = {
    "general": ["time", "pool_size", "result"],
    "ideal": ["time", "k", "m", "y"],
    "efficient": ["time", "k", "m_star", "y1", "m_rem", "y2"],
    "counts": ["time", "k", "y"],
}
RECORD_HEADER = ["site", "date", "result"]
TRUTH_HEADER = ["time", "W", "p"]
SUMMARY_HEADER = ["time", "median", "lo95", "hi95"]


class ParseError(ValueError):
    """Malformed input file; the message names the file and line."""

    def __init__(self, path, line, msg):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {msg}")


def _read_rows(path):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise ParseError(path, 0, f"cannot read file ({err.strerror})") from err
    except (UnicodeDecodeError, csv.Error) as err:
        raise ParseError(path, 0, f"not a readable CSV file ({err})") from err
    if not rows:
        raise ParseError(path, 1, "empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]
    for line, r in body:
        if len(r) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, found {len(r)}")
    return path, header, body


def _num(path, line, name, text, kind=float):
    text = text.strip()
    try:
        if kind is int:
            val = int(text)
        else:
            val = float(text)
            if not math.isfinite(val):
                raise ValueError
    except ValueError:
        what = "an integer" if kind is int else "a finite number"
        raise ParseError(path, line, f"{name}={text!r} is not {what}") from None
    return val


def detect_layout(path) -> str:
    """Layout name (general, ideal, efficient, counts, records) from a file's header."""
    _, header, _ = _read_rows(path)
    for name, cols in HEADERS.items():
        if header == cols:
            return name
    if header[:3] == RECORD_HEADER and header[3:] in ([], ["individual"]):
        return "records"
    raise ParseError(path, 1, f"unknown header {','.join(header)!r}")


def _check_header(path, header, expected):
    if header != expected:
        raise ParseError(path, 1, f"expected header {','.join(expected)!r}, found {','.join(header)!r}")


def _span(times, interval_span):
    if interval_span is None:
        return float(max(times)) if len(times) else 0.0
    return float(interval_span)


def read_records(path):
    """Individual test records: ``site,date,result`` with optional ``individual``."""
    path, header, body = _read_rows(path)
    if header[:3] != RECORD_HEADER or header[3:] not in ([], ["individual"]):
        raise ParseError(path, 1, f"expected header 'site,date,result[,individual]', found {','.join(header)!r}")
    with_id = len(header) == 4
    out = []
    for line, r in body:
        site = r[0].strip()
        if not site:
            raise ParseError(path, line, "empty site")
        try:
            date = _dt.date.fromisoformat(r[1].strip())
        except ValueError:
            raise ParseError(path, line, f"date={r[1].strip()!r} is not an ISO date (YYYY-MM-DD)") from None
        res = _num(path, line, "result", r[2], int)
        if res not in (0, 1):
            raise ParseError(path, line, f"result must be 0 or 1, found {res}")
        ident = (r[3].strip() or None) if with_id else None
        out.append(IndividualRecord(site, date, res, ident))
    return out


def write_records(path, records):
    with_id = any(r.individual is not None for r in records)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RECORD_HEADER + (["individual"] if with_id else []))
        for r in records:
            row = [r.site, r.date.isoformat(), r.result]
            wr.writerow(row + ([r.individual or ""] if with_id else []))


def _per_time_rows(path, body, names, int_cols):
    times, cols = [], {n: [] for n in names}
    seen = {}
    for line, r in body:
        t = _num(path, line, "time", r[0])
        if t in seen:
            raise ParseError(path, line, f"duplicate time {t:g} (first on line {seen[t]})")
        seen[t] = line
        times.append(t)
        for name, text in zip(names, r[1:]):
            cols[name].append(_num(path, line, name, text, int if name in int_cols else float))
    order = np.argsort(times, kind="stable")
    return np.asarray(times)[order], {n: np.asarray(v)[order] for n, v in cols.items()}


def read_observations(path, interval_span=None):
    """Pooled or individual-count observations; the layout follows the header.

    Returns :class:`PooledObservations` for general/ideal/efficient files and
    :class:`IndividualObservations` for ``time,k,y`` files.
    """
    layout = detect_layout(path)
    if layout == "records":
        raise ParseError(path, 1, "individual records need aggregation; read them with read_records")
    path, header, body = _read_rows(path)
    if not body:
        raise ParseError(path, 2, "no data rows")
    if layout == "general":
        rows = []
        for line, r in body:
            t = _num(path, line, "time", r[0])
            rows.append((t, _num(path, line, "pool_size", r[1], int), _num(path, line, "result", r[2], int)))
        times = sorted({t for t, _, _ in rows})
        index = {t: i for i, t in enumerate(times)}
        lay = GeneralLayout([index[t] for t, _, _ in rows], [m for _, m, _ in rows], [y for _, _, y in rows])
        return PooledObservations(TimeGrid(times, _span(times, interval_span)), lay)
    names = HEADERS[layout][1:]
    times, c = _per_time_rows(path, body, names, set(names))
    grid = TimeGrid(times, _span(times, interval_span))
    if layout == "ideal":
        return PooledObservations(grid, IdealLayout(c["k"], c["m"], c["y"]))
    if layout == "efficient":
        return PooledObservations(grid, EfficientLayout(c["k"], c["m_star"], c["y1"], c["m_rem"], c["y2"]))
    return IndividualObservations(grid, c["k"], c["y"])


def _fmt(t):
    t = float(t)
    return str(int(t)) if t.is_integer() else repr(t)


def write_observations(path, data):
    t = data.grid.times
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        if isinstance(data, IndividualObservations):
            wr.writerow(HEADERS["counts"])
            for i in range(t.size):
                wr.writerow([_fmt(t[i]), int(data.k[i]), int(data.y[i])])
            return
        lay = data.layout
        wr.writerow(HEADERS[data.kind])
        if isinstance(lay, GeneralLayout):
            for i, m, y in zip(lay.time_index, lay.pool_size, lay.result):
                wr.writerow([_fmt(t[i]), int(m), int(y)])
        elif isinstance(lay, IdealLayout):
            for i in range(t.size):
                wr.writerow([_fmt(t[i]), int(lay.k[i]), int(lay.m[i]), int(lay.y[i])])
        else:
            for i in range(t.size):
                wr.writerow(
                    [_fmt(t[i])] + [int(a[i]) for a in (lay.k, lay.m_star, lay.y1, lay.m_rem, lay.y2)]
                )


def _write_table(path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in zip(*columns):
            wr.writerow([repr(float(v)) for v in row])


def _read_table(path, expected):
    path, header, body = _read_rows(path)
    _check_header(path, header, expected)
    cols = [[] for _ in expected]
    for line, r in body:
        for j, (name, text) in enumerate(zip(expected, r)):
            cols[j].append(_num(path, line, name, text))
    return [np.asarray(c, dtype=float) for c in cols]


def write_truth(path, truth):
    _write_table(path, TRUTH_HEADER, [truth.grid.times, truth.true_W, truth.true_p])


def read_truth(path):
    """``(times, W, p)`` arrays from a truth file."""
    return tuple(_read_table(path, TRUTH_HEADER))


def write_summary(path, summary: CurveSummary):
    _write_table(path, SUMMARY_HEADER, [summary.times, summary.median, summary.lo95, summary.hi95])


def read_summary(path) -> CurveSummary:
    return CurveSummary(*_read_table(path, SUMMARY_HEADER))


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as err:
        raise ParseError(path, 0, f"cannot read file ({err.strerror})") from err
    except json.JSONDecodeError as err:
        raise ParseError(path, err.lineno, f"invalid JSON: {err.msg}") from err
