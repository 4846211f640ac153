"""Serialization helpers shared by the CLI: stable 9-significant-digit output.

History, matrix, summary, and report files round floats to 9 significant
digits so reruns diff cleanly; NaN accuracy becomes the string "nan" in CSV
and null in JSON.  Fit and ledger files are written elsewhere at full
precision because other commands recompute from them.
"""

from __future__ import annotations

import csv
import json
import math
import os

from .federation import RoundRecord

__all__ = [
    "fmt9",
    "round9",
    "jsonable",
    "write_json",
    "write_history_csv",
    "read_history_csv",
]

HISTORY_HEADER = ["round", "loss", "accuracy", "mean_clip", "messages", "floats"]


def fmt9(value: float | int) -> str:
    """Format a number with 9 significant digits (integers stay integral)."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if math.isnan(value):
        return "nan"
    return format(float(value), ".9g")


def round9(value: float) -> float:
    return float(fmt9(value)) if not math.isnan(value) else math.nan


def jsonable(obj):
    """Recursively convert to JSON-safe values with 9-digit floats; NaN -> null."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return None if math.isnan(obj) else round9(obj)
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(payload: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_history_csv(history: list[RoundRecord], path: str) -> None:
    """One row per round: round, loss, accuracy, mean_clip, messages, floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for rec in history:
            mean_clip = sum(rec.clip_bounds) / len(rec.clip_bounds)
            writer.writerow([rec.round, fmt9(rec.loss), fmt9(rec.accuracy),
                             fmt9(mean_clip), rec.messages, rec.payload_floats])


def read_history_csv(path: str) -> list[dict]:
    """Read a history file back as dict rows with numeric values."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"history file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != HISTORY_HEADER:
        raise ValueError(f"{path}: expected header {','.join(HISTORY_HEADER)}")
    out = []
    for row in rows[1:]:
        out.append({
            "round": int(row[0]),
            "loss": float(row[1]),
            "accuracy": float(row[2]),
            "mean_clip": float(row[3]),
            "messages": int(row[4]),
            "floats": int(row[5]),
        })
    return out
