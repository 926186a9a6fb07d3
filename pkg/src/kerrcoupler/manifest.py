"""Run manifests and deterministic CSV/JSON writers.

A data file never contains a wall-clock time, so re-running a deterministic
command reproduces it byte for byte.  The timestamp lives in a sidecar
``<output>.manifest.json`` together with the effective parameters, grids,
seed, argv and a SHA-256 of every file written.  ``SOURCE_DATE_EPOCH`` pins
the timestamp when set.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

TOOL = "kerrcoupler"
MANIFEST_SUFFIX = ".manifest.json"


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + MANIFEST_SUFFIX)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        t = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
    else:
        t = _dt.datetime.now(tz=_dt.timezone.utc)
    return t.replace(microsecond=0).isoformat()


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def plain(x):
    """Convert numpy scalars, arrays and complex numbers into JSON-safe values."""
    if isinstance(x, dict):
        return {str(k): plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [plain(float(x.real)), plain(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def dumps(obj) -> str:
    return json.dumps(plain(obj), indent=2, sort_keys=True) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    """One header row, then ``repr`` floats so values round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


@dataclass
class RunManifest:
    operation: str
    argv: list
    params: dict
    config: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__
    tool: str = TOOL
    outputs: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)
    timestamp: str = ""

    def provenance(self) -> dict:
        """The deterministic part, safe to embed inside data files.

        ``argv`` is left out because it names the output path.
        """
        d = asdict(self)
        for k in ("argv", "outputs", "environment", "timestamp"):
            d.pop(k)
        return d

    def write(self, out, files) -> Path:
        self.outputs = {Path(p).name: sha256(p) for p in files}
        self.timestamp = _timestamp()
        return write_json(manifest_path(out), asdict(self))


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
