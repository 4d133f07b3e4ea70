"""Deterministic, atomic serialization of results.

Floats are written with 17 significant digits so that every value
round-trips exactly; key order is preserved from the producing code.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FORMAT = ".17g"


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, FLOAT_FORMAT)


def _plain(obj):
    """Numpy scalars and arrays to builtin containers."""
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def dumps(obj, indent: int = 2) -> str:
    """JSON text with 17-digit floats and non-finite values as ``null``."""
    obj = _plain(obj)

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, float):
            return _fmt_float(o)
        if isinstance(o, (int, str)):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def atomic_write_bytes(path, data: bytes):
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_bytes(path, dumps(obj).encode())


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format(float(v), FLOAT_FORMAT)
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_cell(x) for x in np.ravel(np.asarray(v, dtype=object)))
    return str(v)


def csv_text(rows, columns=None) -> str:
    """CSV with a header row; list-valued cells are space separated."""
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r.get(k)) for k in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=None):
    atomic_write_bytes(path, csv_text(rows, columns).encode())


def write_field(path, array, meta=None):
    """Raw little-endian float64 values plus a JSON header ``<path>.json``."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    header = {"dtype": "float64", "byteorder": "little", "order": "C",
              "shape": list(arr.shape), **(meta or {})}
    atomic_write_bytes(path, arr.tobytes())
    write_json(path.with_name(path.name + ".json"), header)


def read_field(path) -> np.ndarray:
    path = Path(path)
    header = read_json(path.with_name(path.name + ".json"))
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    return data.reshape(header["shape"])
