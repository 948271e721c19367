"""Flat-file persistence: atomic writes, CSV tables and JSON envelopes stamped with the
schema version and config hash, plus loading of observable documents."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from importlib import resources

import numpy as np

from .config import SCHEMA_VERSION, ExperimentConfig
from .observables import Observable

ARTIFACT_VERSION = "0.1.0"
FIXTURES = ("theta_n1", "coboundary_trig", "coboundary_g0", "toral_n0", "obstruction_e2", "smooth_atom")


def atomic_write_text(path: str, text: str) -> str:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_csv(path: str, header: list[str], rows, cfg: ExperimentConfig) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION} config_hash={cfg.config_hash()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path: str) -> tuple[dict, list[dict]]:
    """(stamp, rows) from a file written by write_csv."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        stamp = dict(kv.split("=", 1) for kv in first.lstrip("# ").split())
        rows = list(csv.DictReader(fh))
    return stamp, rows


def envelope(cfg: ExperimentConfig, command: str, payload: dict, checks: dict, wall: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "wall_clock_s": wall,
        "payload": _jsonable(payload),
        "checks": {k: bool(v) for k, v in checks.items()},
        "passed": all(checks.values()),
    }


def write_json(path: str, doc: dict) -> str:
    return atomic_write_text(path, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def load_observable(path: str) -> Observable:
    """Observable from a JSON document; ``fixture:NAME`` loads a bundled one."""
    if path.startswith("fixture:"):
        return fixture(path.split(":", 1)[1])
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return Observable.from_dict(doc)


def fixture(name: str) -> Observable:
    if name not in FIXTURES:
        raise FileNotFoundError(f"no bundled observable {name!r}; choose from {', '.join(FIXTURES)}")
    text = resources.files("nilflow_lab.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return Observable.from_dict(json.loads(text))
