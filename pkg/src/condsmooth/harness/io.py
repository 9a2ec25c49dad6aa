"""Plain-text output formats: CSV tables, CSV fields with JSON sidecars, JSON lines.

Floats are written with ``repr`` so every file parses back to the exact
array that produced it.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..errors import ConfigError


def _f(v) -> str:
    return repr(float(v))


def write_table(path, columns: dict) -> None:
    """Write equal-length 1-D columns, in dict order, as CSV."""
    names = list(columns)
    cols = [np.asarray(columns[k], dtype=float).reshape(-1) for k in names]
    n = {c.size for c in cols}
    if len(n) > 1:
        raise ValueError(f"column lengths differ: {sorted(n)}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_f(v) for v in row])


def read_table(path) -> dict:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ConfigError(f"missing file: {path}") from None
    if not rows:
        raise ConfigError(f"{path}: empty table")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed table ({exc})") from None
    return {h: data[:, i] for i, h in enumerate(header)}


def stack_columns(table: dict, prefix: str) -> np.ndarray:
    """Columns ``<prefix>_0, <prefix>_1, ...`` as a 2-D array."""
    cols = [k for k in table if k.startswith(prefix + "_") and k[len(prefix) + 1:].isdigit()]
    cols.sort(key=lambda k: int(k[len(prefix) + 1:]))
    return np.stack([table[k] for k in cols], axis=1) if cols else np.zeros((len(table.get("t", [])), 0))


def vector_columns(prefix: str, values, limit=None) -> dict:
    values = np.asarray(values, dtype=float)
    n = values.shape[1] if limit is None else min(limit, values.shape[1])
    return {f"{prefix}_{i}": values[:, i] for i in range(n)}


def write_field(stem, t: float, field, quantity: str) -> None:
    """``<stem>.csv`` holds the ``nx * ny`` values in one row-major line; ``<stem>.json`` the metadata."""
    field = np.asarray(field, dtype=float)
    stem = Path(stem)
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow([_f(v) for v in field.reshape(-1)])
    meta = {"t": float(t), "nx": int(field.shape[1]), "ny": int(field.shape[0]), "quantity": quantity}
    stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_field(stem):
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    with open(stem.with_suffix(".csv"), newline="") as fh:
        data = np.array([float(v) for r in csv.reader(fh) for v in r], dtype=float)
    if data.size != meta["ny"] * meta["nx"]:
        raise ConfigError(f"{stem}: {data.size} values disagree with the sidecar shape")
    return data.reshape(meta["ny"], meta["nx"]), meta


def write_support(path, t: float, points, weights) -> None:
    """One JSON object per weighted point: ``{"t", "state", "weight"}``."""
    points = np.asarray(points, dtype=float)
    points = points[:, None] if points.ndim == 1 else points
    with open(path, "w") as fh:
        for p, w in zip(points, np.asarray(weights, dtype=float)):
            fh.write(json.dumps({"t": float(t), "state": [float(v) for v in p], "weight": float(w)}) + "\n")


def read_support(path):
    pts, ws, ts = [], [], set()
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            ts.add(d["t"])
            pts.append(d["state"])
            ws.append(d["weight"])
    if len(ts) > 1:
        raise ConfigError(f"{path}: mixed times in one support dump")
    return (ts.pop() if ts else float("nan")), np.array(pts, dtype=float), np.array(ws, dtype=float)


def jsonable(obj):
    """Convert numpy values and non-finite floats (to ``None``) for strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
