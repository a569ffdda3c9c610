"""Deterministic text output: CSV at 9 significant digits, JSON at 17."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from pathlib import Path

import numpy as np

from .geometry import norms

CSV_DIGITS = 9
JSON_DIGITS = 17


def fmt_csv(x):
    return format(float(x), f".{CSV_DIGITS}g")


def _plain(obj):
    """Convert numpy / enum / dataclass-ish objects into JSON-ready builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return str(obj)


class _Float17:
    """Marker so the encoder can print floats with a fixed digit count."""


def _encode(obj, indent=2, level=0):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        return format(obj, f".{JSON_DIGITS}g")
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return json.dumps(obj)


def dumps(obj):
    """JSON text with every float at 17 significant digits; non-finite floats become null."""
    return _encode(_plain(obj)) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def worldline_csv(metric, w):
    n = w.dimension
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["lambda"] + [f"x{i}" for i in range(n)] + [f"v{i}" for i in range(n)] + ["norm"])
    g = norms(metric, w.x, w.v)
    for lam, x, v, nv in zip(w.lam, w.x, w.v, g):
        out.writerow([fmt_csv(lam)] + [fmt_csv(a) for a in x] + [fmt_csv(a) for a in v] + [fmt_csv(nv)])
    return buf.getvalue()


def worldline_dict(w, with_samples=True):
    d = {
        "param_kind": w.param_kind,
        "speed": w.speed,
        "span": w.span,
        "start": w.start,
        "end": w.end,
        "metadata": w.metadata,
    }
    if with_samples:
        d["lambda"] = w.lam
        d["x"] = w.x
        d["v"] = w.v
    return d


def read_worldline_csv(path):
    """Read back ``(lam, x, v)`` arrays from :func:`worldline_csv` output."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = (data.shape[1] - 2) // 2
    return data[:, 0], data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n]


SCAN_COLUMNS = ["qm", "converged", "miss_norm", "proper_length", "action_I"]


def scan_csv(scan):
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(SCAN_COLUMNS)
    for e in scan.entries:
        out.writerow([
            fmt_csv(e.ratio),
            int(e.result.converged),
            fmt_csv(e.result.miss_norm),
            fmt_csv(e.proper_length),
            fmt_csv(e.action_I),
        ])
    return buf.getvalue()


def scan_dict(scan, with_trajectories=False):
    rows = []
    for e in scan.entries:
        row = {
            "qm": e.ratio,
            "converged": e.result.converged,
            "miss_norm": e.result.miss_norm,
            "proper_length": e.proper_length,
            "action_I": e.action_I,
            "recovered_qm": None if e.recovered is None else e.recovered.value,
            "kernel_degenerate": bool(e.recovered is not None and e.recovered.is_symbol_r),
            "efe_residual": e.efe_residual,
            "message": e.result.message,
        }
        if with_trajectories and e.result.worldline is not None:
            row["trajectory"] = worldline_dict(e.result.worldline)
        rows.append(row)
    return {"entries": rows, "image_separation": scan.separations}
