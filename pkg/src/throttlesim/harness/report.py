"""Writing experiment reports: one CSV per table plus a summary JSON.

Output is a pure function of the report, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import enum
import json
from pathlib import Path
from typing import Dict, Iterable, List

import numpy as np

FORMATS = ("csv", "summary")
FLOAT_DIGITS = 6


def _clean(value):
    """Plain JSON-able value with floats rounded to a fixed precision."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return round(float(value), FLOAT_DIGITS)
    return value


def write_table(rows: List[dict], path: Path, columns: Iterable[str] = ()) -> None:
    """CSV with a header row; an empty table still gets its header."""
    cols = list(columns) or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_clean(r.get(c, "")) for c in cols])


def summary_dict(report) -> dict:
    return _clean({
        "experiment": report.experiment,
        "config_hash": report.config_hash,
        "seed": report.seed,
        "params": report.params,
        "summary": report.summary,
        "tables": sorted(report.tables),
    })


def emit_report(report, out_dir, formats: Iterable[str] = FORMATS) -> Dict[str, Path]:
    """Write ``report`` under ``out_dir``; returns the written paths by name."""
    formats = list(formats)
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown report formats: {sorted(bad)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    if "csv" in formats:
        for name, rows in sorted(report.tables.items()):
            path = out / f"{report.experiment}_{name}.csv"
            write_table(rows, path)
            written[name] = path
    if "summary" in formats:
        path = out / f"{report.experiment}_summary.json"
        with open(path, "w") as fh:
            json.dump(summary_dict(report), fh, sort_keys=True, indent=2)
            fh.write("\n")
        written["summary"] = path
    return written
