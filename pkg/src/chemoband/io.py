"""Deterministic CSV/JSON writers and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence

import numpy as np

FLOAT_FMT = ".17g"


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), FLOAT_FMT)
    if value is None:
        return ""
    return str(value)


def write_csv(path, rows: Iterable[Mapping], columns: Optional[Sequence[str]] = None) -> Path:
    """Write dict rows with a one-line header and 17-significant-digit floats."""
    path = Path(path)
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    return path


def columns_to_rows(columns: Mapping[str, Sequence]) -> List[dict]:
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    return [dict(zip(names, vals)) for vals in zip(*arrays)]


def to_jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else repr(value)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def write_table(path, rows: Sequence[Mapping], fmt: str, columns: Optional[Sequence[str]] = None) -> Path:
    """Rows as CSV or as a JSON list of records, chosen by ``fmt``."""
    if fmt == "json":
        return write_json(path, list(rows))
    return write_csv(path, rows, columns)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def versions() -> dict:
    import numba
    import scipy

    from . import __version__
    from ._kernels import backend

    return {
        "chemoband": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
        "backend": backend(),
    }


def write_manifest(path, command: str, spec: Mapping, seed, outputs: Sequence[Path]) -> Path:
    """Record what produced a set of files.  Contains no timestamps, so it is
    itself reproducible."""
    path = Path(path)
    base = path.parent
    spec_text = json.dumps(to_jsonable(spec), sort_keys=True)
    entries = []
    for out in sorted(outputs, key=lambda p: str(p)):
        out = Path(out)
        try:
            rel = out.relative_to(base)
        except ValueError:
            rel = out
        entries.append({"path": str(rel), "sha256": sha256_file(out)})
    manifest = {
        "command": command,
        "spec": spec,
        "spec_sha256": sha256_text(spec_text),
        "seed": seed,
        "versions": versions(),
        "outputs": entries,
    }
    return write_json(path, manifest)


def verify_manifest(path) -> List[str]:
    """Return the output paths whose files are missing or whose hashes differ."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    bad = []
    for entry in manifest["outputs"]:
        target = path.parent / entry["path"]
        if not target.exists() or sha256_file(target) != entry["sha256"]:
            bad.append(entry["path"])
    return bad
