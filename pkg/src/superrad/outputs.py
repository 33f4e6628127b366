"""Plot-ready data files with self-describing metadata.

CSV files start with '#'-prefixed lines carrying the tool version, units,
seed and the full configuration as JSON; JSON files wrap their payload as
``{"meta": ..., "data": ...}`` with sorted keys. Nothing time-dependent is
written, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__

UNITS = "Gamma0=1, lambda0=1, hbar=1, k0=2pi; times in 1/Gamma0, rates in Gamma0, lengths in lambda0"


def metadata(config: dict, seed=None, **extra) -> dict:
    meta = {"tool": "superrad", "version": __version__, "units": UNITS, "seed": seed,
            "config": config}
    meta.update(extra)
    return meta


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# superrad {meta.get('version', __version__)}\n")
    buf.write(f"# units: {meta.get('units', UNITS)}\n")
    buf.write(f"# seed: {meta.get('seed')}\n")
    buf.write("# meta: " + dumps(meta) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def write_json(path, data, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable({"meta": meta, "data": data}), sort_keys=True,
                      ensure_ascii=False, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_csv(path):
    """Return (meta, columns, rows as list of string lists)."""
    meta = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = []
    for line in lines:
        if line.startswith("# meta: "):
            meta = json.loads(line[len("# meta: "):])
        elif not line.startswith("#"):
            body.append(line)
    reader = list(csv.reader(body))
    return meta, reader[0], reader[1:]


def read_meta(path) -> dict:
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))["meta"]
    return read_csv(path)[0]
