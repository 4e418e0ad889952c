"""Merge trace CSVs into one long-format table for plotting.

Output columns: ``algorithm, metric, x_axis, x, value``. Only columns that
carry data are emitted. Downsampling splits each trace into equal-count
buckets and keeps, per bucket, the last x value, the bucket minimum of
``gradH_sq`` and the last value of every other metric. The running minimum
of ``gradH_sq`` is therefore exact at every emitted point.
"""

import csv
import io
import math
import os

import numpy as np

from ..exceptions import ParseError
from ..solver import TRACE_COLUMNS

METRIC_COLUMNS = ("gradH_sq", "f_val", "g_val", "test_metric")
AXES = (("iterations", "iter"), ("samples", None), ("wall_ms", "wall_ms"))
LONG_COLUMNS = ("algorithm", "metric", "x_axis", "x", "value")


def read_trace(path):
    """Read a trace CSV into a dict of float columns (NaN for blanks)."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as err:
        raise ParseError(str(err), path=path) from err
    if header is None or tuple(header) != TRACE_COLUMNS:
        raise ParseError(f"trace header must be {','.join(TRACE_COLUMNS)}", path=path, line=1, column=1)
    cols = {c: [] for c in TRACE_COLUMNS}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(TRACE_COLUMNS):
            raise ParseError(f"expected {len(TRACE_COLUMNS)} fields, got {len(row)}", path=path, line=lineno)
        for c, v in zip(TRACE_COLUMNS, row):
            try:
                cols[c].append(float(v) if v != "" else math.nan)
            except ValueError as err:
                raise ParseError(f"non-numeric {c} value {v!r}", path=path, line=lineno) from err
    return {c: np.array(v) for c, v in cols.items()}


def downsample(cols, points):
    """Bucket rows into at most ``points`` groups (see module docstring)."""
    n = len(cols["iter"])
    if points is None or n <= points:
        return cols
    edges = np.linspace(0, n, points + 1).astype(int)
    out = {c: [] for c in cols}
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        for c, v in cols.items():
            if c == "gradH_sq":
                seg = v[lo:hi]
                out[c].append(np.nanmin(seg) if np.any(~np.isnan(seg)) else math.nan)
            else:
                out[c].append(v[hi - 1])
    return {c: np.array(v) for c, v in out.items()}


def long_rows(algorithm, cols):
    samples = cols["samples_f"] + cols["samples_g"]
    rows = []
    for metric in METRIC_COLUMNS:
        vals = cols[metric]
        if np.all(np.isnan(vals)):
            continue
        for axis, src in AXES:
            xs = samples if src is None else cols[src]
            if np.all(np.isnan(xs)):
                continue
            for x, v in zip(xs, vals):
                if not (math.isnan(x) or math.isnan(v)):
                    rows.append((algorithm, metric, axis, x, v))
    return rows


def merge(paths, labels=None, points=None):
    if not paths:
        raise ValueError("plotdata needs at least one trace")
    labels = labels or [os.path.splitext(os.path.basename(p))[0] for p in paths]
    if len(labels) != len(paths):
        raise ValueError("one label per trace")
    rows = []
    for label, path in zip(labels, paths):
        rows.extend(long_rows(label, downsample(read_trace(path), points)))
    return rows


def to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LONG_COLUMNS)
    for alg, metric, axis, x, v in rows:
        xs = str(int(x)) if float(x).is_integer() else repr(float(x))
        w.writerow([alg, metric, axis, xs, repr(float(v))])
    return buf.getvalue()
