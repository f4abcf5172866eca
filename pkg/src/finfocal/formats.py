"""CSV and JSON writers with fixed number formatting."""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

__all__ = ["fmt", "write_csv", "read_csv", "write_summary", "summary_schema", "to_jsonable"]


def fmt(x) -> str:
    """17 significant digits for floats; booleans and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return list(r.fieldnames or []), list(r)


def to_jsonable(obj):
    """Recursively convert numpy values; non-finite floats become strings so the output stays valid JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return fmt(x)
        return float(f"{x:.17g}")
    return obj


def summary_schema() -> dict:
    return json.loads(resources.files("finfocal").joinpath("schemas/summary.schema.json").read_text())


def write_summary(path: Path, summary: dict) -> dict:
    data = to_jsonable(summary)
    jsonschema.validate(data, summary_schema())
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return data
