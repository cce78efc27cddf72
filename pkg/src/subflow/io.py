"""CSV / JSON artifacts with deterministic formatting, plus run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .synthbench import Dataset


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v)) if isinstance(v, (bool, np.bool_, np.integer)) else str(v)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_records(path, records: list, header=None) -> Path:
    header = header or (list(records[0]) if records else [])
    return write_rows(path, header, ([r.get(h, "") for h in header] for r in records))


def read_records(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_dataset(path, ds: Dataset) -> Path:
    """``class,true_mode,subclass,synthetic,x_0..x_{D-1}`` with full float precision."""
    header = ["class", "true_mode", "subclass", "synthetic"] + [f"x_{i}" for i in range(ds.dim)]
    rows = (
        [int(c), int(m), int(k), int(s), *x]
        for c, m, k, s, x in zip(ds.y, ds.true_mode, ds.subclass, ds.synthetic, ds.x)
    )
    return write_rows(path, header, rows)


def read_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing dataset file {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(header))
    col = {h: i for i, h in enumerate(header)}
    xcols = [col[h] for h in header if h.startswith("x_")]
    get = lambda name, default: (data[:, col[name]].astype(int) if name in col  # noqa: E731
                                 else np.full(len(data), default, dtype=int))
    return Dataset(data[:, xcols], data[:, col["class"]].astype(int), get("true_mode", -1),
                   get("subclass", -1), get("synthetic", 0))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}")
    return json.loads(path.read_text())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, stage: str, config_hash: str, seeds: dict, files) -> Path:
    """Record what a stage produced: config hash, seeds and a digest per file."""
    directory = Path(directory)
    entries = {Path(f).name: sha256_file(f) for f in sorted(files, key=lambda p: Path(p).name)}
    return write_json(directory / "manifest.json",
                      {"stage": stage, "config_hash": config_hash, "seeds": seeds, "files": entries})
