"""Matrix and report files.

Matrices are headerless CSV with ``%.17g`` reals, so a write/read round trip
is bit-exact.  Reports are JSON documents.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import IoError

__all__ = ["read_matrix", "write_matrix", "read_report", "write_report", "to_jsonable"]

MATRIX_EXT = (".csv", ".txt")
REPORT_EXT = (".json",)


def _check_ext(path, allowed, what):
    ext = Path(path).suffix.lower()
    if ext not in allowed:
        raise IoError(f"unsupported {what} file extension {ext!r} for {path}", path=str(path))


def read_matrix(path) -> np.ndarray:
    _check_ext(path, MATRIX_EXT, "matrix")
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read matrix from {path}: {exc}", path=str(path)) from exc
    return M


def write_matrix(path, M) -> None:
    _check_ext(path, MATRIX_EXT, "matrix")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    try:
        np.savetxt(path, M, delimiter=",", fmt="%.17g")
    except OSError as exc:
        raise IoError(f"cannot write matrix to {path}: {exc}", path=str(path)) from exc


def to_jsonable(obj):
    """Recursively convert numpy values; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def write_report(path, report: dict) -> None:
    _check_ext(path, REPORT_EXT, "report")
    try:
        d = os.path.dirname(os.fspath(path))
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(to_jsonable(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write report to {path}: {exc}", path=str(path)) from exc


def read_report(path) -> dict:
    _check_ext(path, REPORT_EXT, "report")
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read report from {path}: {exc}", path=str(path)) from exc
