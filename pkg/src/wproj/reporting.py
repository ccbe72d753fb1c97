"""Serialisation of outcomes and reports, and parsing of Sigma specifications."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError

CSV_FIELDS = ("n", "test", "metric", "value", "se", "replications", "failures", "mean_statistic")


def _plain(obj):
    """Convert dataclasses / numpy objects into JSON-compatible builtins, keeping field order."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.repr}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _dump(obj, out):
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        # non-finite values have no JSON literal
        out.append(format(obj, ".17g") if math.isfinite(obj) else "null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, list):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _dump(v, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(k))
            out.append(":")
            _dump(v, out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def to_json(obj) -> str:
    """Compact JSON with floats at 17 significant digits."""
    out = []
    _dump(_plain(obj), out)
    return "".join(out)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_FIELDS)
    for r in rows:
        d = _plain(r)
        wr.writerow([format(d[k], ".17g") if isinstance(d[k], float) else d[k] for k in CSV_FIELDS])
    return buf.getvalue()


def table_to_csv(table: list) -> str:
    """CSV for a list of flat dicts, header taken from the union of keys in first-seen order."""
    keys = []
    for row in table:
        for k in row:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(keys)
    for row in table:
        wr.writerow([format(row[k], ".17g") if isinstance(row.get(k), float) else row.get(k, "")
                     for k in keys])
    return buf.getvalue()


def emit_report(report, fmt: str = "json") -> bytes:
    """Render a report; SimReport-like objects carry a ``rows`` list."""
    if fmt == "json":
        return (to_json(report) + "\n").encode()
    if fmt == "csv":
        rows = report["rows"] if isinstance(report, dict) else report.rows
        if rows and isinstance(rows[0], dict) and set(CSV_FIELDS) - set(rows[0]):
            return table_to_csv(rows).encode()
        return rows_to_csv(rows).encode()
    raise ValueError(f"unknown format {fmt!r}")


def write_output(payload: bytes, path=None):
    if path is None or str(path) == "-":
        import sys

        sys.stdout.buffer.write(payload)
        sys.stdout.flush()
        return
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise OSError(f"cannot write output to {path}: {exc}") from exc


def parse_sigma(spec, m: int) -> np.ndarray:
    """identity | JSON diagonal list | JSON matrix | path to a JSON or whitespace text file."""
    if spec is None or str(spec).strip().lower() in ("", "identity", "i"):
        return np.eye(m)
    text = str(spec).strip()
    p = Path(text)
    if not text.startswith("[") and p.exists():
        raw = p.read_text().strip()
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            try:
                val = np.loadtxt(io.StringIO(raw), ndmin=2).tolist()
            except ValueError as exc:
                raise ConfigError(f"cannot parse sigma file {p}: {exc}") from exc
    else:
        try:
            val = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse sigma {text!r}: {exc}") from exc
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        arr = np.eye(m) * float(arr)
    elif arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (m, m):
        raise ConfigError(f"sigma has shape {arr.shape}, expected ({m}, {m})")
    if not np.allclose(arr, arr.T):
        raise ConfigError("sigma must be symmetric")
    eig = np.linalg.eigvalsh(arr)
    if eig[0] <= 0:
        raise ConfigError(f"sigma is not positive definite: eigenvalue {eig[0]:.6g} <= 0")
    return arr
