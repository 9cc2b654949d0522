"""Matrix CSV and JSON helpers shared by the CLI and the result writers."""
import csv
import json
import math

import numpy as np

from .panel import fmt


def write_matrix_csv(path, M, row_labels=None, col_labels=None):
    """Write a 2-D array with 17 significant digits.

    With labels, the first row is ``["", *col_labels]`` and each data row
    starts with its row label.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if col_labels is not None:
            w.writerow(([""] if row_labels is not None else []) + list(col_labels))
        for i, row in enumerate(M):
            cells = [fmt(v) for v in row]
            w.writerow(([row_labels[i]] if row_labels is not None else []) + cells)


def read_matrix_csv(path):
    """Inverse of :func:`write_matrix_csv`; labels, if present, are dropped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        return np.zeros((0, 0))

    def numeric(cell):
        try:
            float(cell)
            return True
        except ValueError:
            return False

    if not all(numeric(c) for c in rows[0]):
        rows = rows[1:]
    if rows and not numeric(rows[0][0]):
        rows = [r[1:] for r in rows]
    return np.array([[float(c) for c in r] for r in rows], dtype=np.float64)


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
