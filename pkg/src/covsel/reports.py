"""Canonical JSON serialization for reports.

Reports must be byte-identical across reruns and worker counts, so keys are
sorted, numpy scalars/arrays are converted to plain Python values, non-finite
floats become null, and no timestamps are ever included.
"""

from __future__ import annotations

import json
import math

import numpy as np


def to_jsonable(obj):
    """Recursively convert report values to canonical JSON-ready types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def canonical_dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_report(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(obj))
