"""CSV/JSON writers, field dumps and the run manifest."""
from __future__ import annotations

import csv
import json
import os
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .grid import HalfBall, HalfBox, ScalarField, Sector, WeightedGrid


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "_asdict"):
        return obj._asdict()
    if hasattr(obj, "__dataclass_fields__"):
        return {k: getattr(obj, k) for k in obj.__dataclass_fields__}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(obj):
    """Replace NaN/inf by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def write_json(path, obj):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_finite(obj), fh, default=_jsonable, indent=2, sort_keys=True,
                  ensure_ascii=False, allow_nan=False)
        fh.write("\n")
    return path


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header, rows):
    """RFC-4180 CSV (minimal quoting, CRLF line ends)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# -- fields ------------------------------------------------------------------

def field_to_dict(field: ScalarField) -> dict:
    g = field.grid
    return {"grid": g.describe(), "values": field.values.tolist()}


def grid_from_dict(desc: dict) -> WeightedGrid:
    d = desc["domain"]
    if d["kind"] == "halfball":
        dom = HalfBall(float(d["radius"]))
    elif d["kind"] == "halfbox":
        dom = HalfBox(tuple(float(w) for w in d["half_widths"]), float(d["height"]))
    elif d["kind"] == "sector":
        dom = Sector(int(d["i"]), float(d["radius"]))
    else:
        raise ValueError(f"unknown domain kind {d['kind']!r}")
    return WeightedGrid(int(desc["dim"]), float(desc["h"]), float(desc["a"]), dom)


def field_from_dict(doc: dict) -> ScalarField:
    return ScalarField(grid_from_dict(doc["grid"]), np.asarray(doc["values"], dtype=float))


# -- runs --------------------------------------------------------------------

class RunDirectory:
    """Output directory ``<command>-<timestamp>`` with a manifest.

    The manifest is written on creation (config echo and version tag) and
    rewritten whenever an artifact is added, so it always lists every file in
    the directory.  It carries no timestamp, which keeps repeated runs
    byte-identical apart from the directory name.
    """

    def __init__(self, root, command: str, config: dict, stamp: str | None = None):
        stamp = stamp or datetime.now().strftime("%Y%m%dT%H%M%S")
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        base = root / f"{command}-{stamp}"
        path, k = base, 1
        while path.exists():
            path = Path(f"{base}-{k}")
            k += 1
        path.mkdir()
        self.path = path
        self.manifest = {"command": command, "version": __version__,
                         "config": config, "artifacts": [], "status": "running"}
        self._flush()

    def _flush(self):
        write_json(self.path / "manifest.json", self.manifest)

    def _register(self, name, kind):
        self.manifest["artifacts"].append({"name": name, "kind": kind})
        self._flush()

    def csv(self, name, header, rows):
        p = write_csv(self.path / name, header, rows)
        self._register(name, "csv")
        return p

    def json(self, name, obj):
        p = write_json(self.path / name, obj)
        self._register(name, "json")
        return p

    def finish(self, status: str, exit_code: int, message: str | None = None):
        self.manifest["status"] = status
        self.manifest["exit_code"] = exit_code
        if message:
            self.manifest["message"] = message
        self._flush()


def listed_artifacts(run_dir) -> set:
    man = read_json(Path(run_dir) / "manifest.json")
    return {a["name"] for a in man["artifacts"]}


def run_files(run_dir) -> set:
    return {f for f in os.listdir(run_dir) if f != "manifest.json"}
