"""Tidy CSV and JSON outputs of BO runs.

Every CSV written here is a deterministic function of the run; wall-clock
measurements go to the separate ``timing*.csv`` files and to the JSON
``metadata`` block only.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import platform
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__


def fmt(value):
    """Shortest round-trip text of a number; empty for NaN."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return ""
    return repr(v)


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in r])


def trace_header(n, method=None):
    head = ["iter", *[f"x{i + 1}" for i in range(n)], "p", *[f"g{i + 1}" for i in range(n)],
            "delta", "lcb", "fallback"]
    return (["method"] + head) if method is not None else head


def trace_rows(trace, method=None):
    """One row per BO iteration: sample, observation, step and acquisition value."""
    rows = []
    for it in trace.iterations:
        row = [it.iteration, *it.x, it.p, *it.value, it.delta, it.lcb, bool(it.fallback)]
        rows.append(([method] + row) if method is not None else row)
    return rows


def write_trace_csv(path, trace, method=None):
    _write_rows(path, trace_header(trace.config.system.state_dim, method), trace_rows(trace, method))


def write_timing_csv(path, runs):
    """Per-iteration acquisition wall time; the only nondeterministic CSV.

    ``runs`` is a sequence of ``(method, seed, trace)``.
    """
    rows = [[method, seed, it.iteration, it.acq_ms]
            for method, seed, trace in runs for it in trace.iterations]
    _write_rows(path, ["method", "seed", "iter", "acq_ms"], rows)


def write_branch_csv(path, trace):
    """Predicted branch points visited by the acquisition sweep of each iteration."""
    n = trace.config.system.state_dim
    head = ["iter", "location", *[f"x{i + 1}" for i in range(n)], "p"]
    rows = [list(r) for samples in trace.branch_samples for r in samples]
    _write_rows(path, head, rows)


def write_curves_csv(path, columns):
    """``columns`` maps a name to a 1D sequence; shorter columns are left blank."""
    length = max(len(v) for v in columns.values())
    rows = []
    for k in range(length):
        rows.append([k + 1] + [v[k] if k < len(v) else float("nan") for v in columns.values()])
    _write_rows(path, ["iter", *columns], rows)


def clean_json(obj):
    """Recursively replace non-finite floats by ``None`` and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    return obj


def metadata(**extra):
    return {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "version": __version__, "python": platform.python_version(), **extra}


def write_summary(path, summary, schema=None):
    """Validate (when a schema is given) and write the summary JSON."""
    doc = clean_json(summary)
    if schema is not None:
        jsonschema.validate(doc, schema)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc
