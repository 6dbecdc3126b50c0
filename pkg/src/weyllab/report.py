"""Deterministic writers for JSON, CSV and plot data (12 significant digits, fixed field order)."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def g12(v):
    """Round a float to 12 significant digits; non-finite values become strings."""
    if v is None or isinstance(v, (bool, np.bool_)):
        return None if v is None else bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return float(f"{v:.12g}")


def clean(obj):
    """Recursively apply g12 to every number (keys keep their insertion order)."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [clean(v) for v in obj]
    if isinstance(obj, (float, int, np.floating, np.integer, np.bool_, bool)) or obj is None:
        return g12(obj)
    return obj


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(clean(obj), indent=1) + "\n")
    return path


def _cell(v):
    if isinstance(v, str):
        return v
    c = g12(v)
    return "" if c is None else (f"{c:.12g}" if isinstance(c, float) else str(c))


def write_csv(header, rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def write_plot_data(columns, rows, path, title=""):
    """Whitespace-separated columns with a '#' header, readable by gnuplot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if title:
        lines.append(f"# {title}")
    lines.append("# " + " ".join(columns))
    for r in rows:
        lines.append(" ".join(_cell(v) or "nan" for v in r))
    path.write_text("\n".join(lines) + "\n")
    return path
