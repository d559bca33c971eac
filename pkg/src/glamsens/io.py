"""File formats: sample CSVs, canonical JSON and atomic writes.

Every output carries a provenance block (config hash and seed). JSON files
get a ``provenance`` key; CSV files start with ``# key: value`` comment
lines, which the readers here skip.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DomainError


class InputFileError(DomainError):
    """A malformed input file; ``row`` is the 1-based line number when known."""

    def __init__(self, message, path=None, row=None):
        super().__init__(message)
        self.path = None if path is None else str(path)
        self.row = row


def canonical_json(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj, provenance: dict | None = None):
    if provenance is not None:
        obj = dict(obj, provenance=provenance)
    atomic_write(path, canonical_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputFileError(f"file not found: {path}", path) from None
    except json.JSONDecodeError as exc:
        raise InputFileError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


def comment_lines(provenance: dict | None) -> str:
    if not provenance:
        return ""
    return "".join(f"# {k}: {provenance[k]}\n" for k in sorted(provenance))


def _fmt(v) -> str:
    return repr(float(v))


def samples_to_csv(X, y, names=None, rep=None, provenance=None) -> str:
    """CSV text with header ``x1..xM[,rep],y``; floats are written round-trip exact."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise DomainError("X and y have different lengths")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    buf = io.StringIO()
    buf.write(comment_lines(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names + (["rep"] if rep is not None else []) + ["y"])
    for k in range(y.size):
        row = [_fmt(v) for v in X[k]]
        if rep is not None:
            row.append(str(int(rep[k])))
        w.writerow(row + [_fmt(y[k])])
    return buf.getvalue()


def read_samples_csv(path, dim: int | None = None):
    """Read a sample CSV written by :func:`samples_to_csv` (or by hand).

    The last column is the output ``y``; a column named ``rep`` is dropped.
    Returns (X, y, input column names).

    Raises:
        InputFileError: missing file, wrong column count, non-numeric or
            non-finite value; the message and ``row`` name the offending line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise InputFileError(f"file not found: {path}", path) from None
    header, rows = None, []
    for lineno, raw in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not raw or (raw[0].startswith("#")):
            continue
        if header is None:
            header = [h.strip() for h in raw]
            if len(header) < 2 or header[-1] != "y":
                raise InputFileError("header must be x1..xM[,rep],y", path, lineno)
            continue
        if len(raw) != len(header):
            raise InputFileError(f"row {lineno}: expected {len(header)} fields, got {len(raw)}", path, lineno)
        try:
            vals = [float(v) for v in raw]
        except ValueError:
            raise InputFileError(f"row {lineno}: non-numeric value", path, lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise InputFileError(f"row {lineno}: non-finite value", path, lineno)
        rows.append(vals)
    if header is None or not rows:
        raise InputFileError("no data rows", path)
    data = np.array(rows)
    keep = [j for j, h in enumerate(header[:-1]) if h != "rep"]
    names = [header[j] for j in keep]
    if dim is not None and len(keep) != dim:
        raise InputFileError(f"expected {dim} input columns, got {len(keep)}", path, 1)
    return data[:, keep], data[:, -1], names


def long_csv(rows, columns, provenance=None) -> str:
    """CSV text of dict rows in the given column order."""
    buf = io.StringIO()
    buf.write(comment_lines(provenance))
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for r in rows:
        w.writerow({k: (_fmt(v) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()
