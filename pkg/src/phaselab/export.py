"""CSV and JSON writers with deterministic formatting."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

LOG10_E = 1.0 / math.log(10.0)
UNDERFLOW = 1e-300


def fmt(x: float) -> str:
    return repr(float(x))


def prob_columns(log_p: float) -> tuple:
    """Linear and log10 text for a probability given as a natural log.

    Probabilities below 1e-300 keep only their log10 value; the linear
    column is written as 0.
    """
    if log_p == -math.inf:
        return "0", "-inf"
    p = math.exp(log_p)
    lin = fmt(p) if p >= UNDERFLOW else "0"
    return lin, fmt(log_p * LOG10_E)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
