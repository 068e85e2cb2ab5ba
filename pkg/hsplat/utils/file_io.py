"""Report files: JSON and CSV written with fixed formatting."""

import json
import os
import tempfile
from typing import Any

import numpy as np
import pandas as pd
from filelock import FileLock

from hsplat.errors import DataError

_report_lock = FileLock(os.path.join(tempfile.gettempdir(), "hsplat_reports.lock"))


def ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _plain(value: Any) -> Any:
    """json.dump fallback for numpy scalars and arrays."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def read_json(path: str) -> Any:
    """Parse a JSON document; a missing or malformed file is a DataError."""
    if not path or not os.path.isfile(path):
        raise DataError(f"json file not found: {path}")
    try:
        with open(path, "r") as handle:
            return json.load(handle)
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable json file {path}: {exc}") from exc


def write_json(path: str, data: Any, *, sort_keys: bool = True) -> None:
    if not path:
        raise ValueError("path is required")
    ensure_parent(path)
    text = json.dumps(data, indent=2, sort_keys=sort_keys, default=_plain)
    with _report_lock:
        with open(path, "w") as handle:
            handle.write(text + "\n")


def write_csv(path: str, frame: pd.DataFrame) -> None:
    """Write a table with a fixed float format so repeated runs are byte-identical."""
    if not path:
        raise ValueError("path is required")
    ensure_parent(path)
    with _report_lock:
        frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path)
