"""CSV / JSON emission and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import GainTrace

TRACE_HEADER = ["time_s", "delta_rad_s", "gain", "re_a2", "im_a2", "re_a_in", "im_a_in",
                "provenance"]


def _fmt(x):
    return f"{float(x):.17g}"


def _atomic_write(path, write):
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace_csv(path, trace):
    def body(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, d, g, a2, ain in zip(trace.times, trace.delta, trace.gain,
                                    trace.probe_amp, trace.a_in):
            w.writerow([_fmt(t), _fmt(d), _fmt(g), _fmt(a2.real), _fmt(a2.imag),
                        _fmt(ain.real), _fmt(ain.imag), trace.provenance])
    _atomic_write(path, body)


def read_trace_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRACE_HEADER:
        raise ValueError(f"{path}: not a gain-trace CSV")
    body = rows[1:]
    data = np.array([[float(x) for x in r[:7]] for r in body]).reshape(-1, 7)
    provenance = body[0][7] if body else "dynamics"
    return GainTrace(times=data[:, 0], delta=data[:, 1], gain=data[:, 2],
                     probe_amp=data[:, 3] + 1j * data[:, 4], a_in=data[:, 5] + 1j * data[:, 6],
                     provenance=provenance)


def write_table_csv(path, header, rows):
    def body(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(path, body)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def canonical_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
    _atomic_write(path, lambda fh: fh.write(text))


def code_version():
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        from . import __version__
        return __version__


@dataclass
class RunManifest:
    """Everything needed to reproduce one run; ``content_hash`` covers all other fields."""

    command: str
    params: dict
    grid: dict
    solver: dict
    schedule: dict
    extra: dict = field(default_factory=dict)
    version: str = field(default_factory=code_version)

    def body(self):
        return {"command": self.command, "params": self.params, "grid": self.grid,
                "solver": self.solver, "schedule": self.schedule, "extra": self.extra,
                "version": self.version}

    @property
    def content_hash(self):
        return hashlib.sha256(canonical_json(self.body()).encode()).hexdigest()

    def to_dict(self):
        return {**self.body(), "content_hash": self.content_hash}

    def write(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        stored = d.pop("content_hash", None)
        m = cls(**d)
        if stored is not None and stored != m.content_hash:
            raise ValueError("manifest content hash does not match its contents")
        return m

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
