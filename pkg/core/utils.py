import os
import csv
import json
import hashlib
from pathlib import Path

import numpy as np

APP_NAME = "Random Nonlocal Phase-Field Lab"

APP_VERSION = "0.3.0"

APP_FOLDER_NAME = ".phasefield_lab"

# 17 significant digits round-trip every float64 exactly.
FLOAT_FORMAT = ".17g"


def get_app_dir():
    base_dir = os.path.expanduser("~")

    return os.path.join(base_dir, APP_FOLDER_NAME)


def get_cache_dir(cache_dir=None):
    """Return the kernel-table cache folder, creating it on first use."""
    path = Path(cache_dir) if cache_dir else Path(get_app_dir()) / "kernel_cache"
    path.mkdir(parents=True, exist_ok=True)
    return path


def derive_seed(base_seed: int, *labels) -> int:
    """
    Derive a 64-bit child seed from a base seed and any number of integer or string
    labels (realization index, resample index, tile coordinates, ...).

    The result depends only on the inputs, never on scheduling order, so parallel and
    serial sweeps draw identical streams.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base_seed)).encode("utf-8"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def fmt_float(x) -> str:
    return format(float(x), FLOAT_FORMAT)


def fmt_value(value):
    """Format a scalar or list for CSV/manifest output."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(fmt_value(v) for v in value)
    if value is None:
        return ""
    return str(value)


def to_jsonable(obj):
    """Recursively convert numpy containers and scalars into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, payload):
    """Write JSON with exact float round trip (json uses repr for floats)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(to_jsonable(payload), f, indent=2, allow_nan=True)
        f.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path, header, rows):
    """
    Write a comma-separated table with a header row, UTF-8 and LF line endings.

    Args:
        path: Output file.
        header (list[str]): Column names.
        rows (iterable): Each row is a sequence aligned with ``header``; floats are
            printed with 17 significant digits.
    """
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_value(v) for v in row])


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]


def check_dir_writable(path) -> bool:
    """Create ``path`` if needed and report whether files can be written into it."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError:
        return False
    return os.access(path, os.W_OK | os.X_OK)
