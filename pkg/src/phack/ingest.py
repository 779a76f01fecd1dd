"""Reading and writing p-value records in CSV form.

A record file is UTF-8 CSV with a header row. Column names are passed
explicitly; nothing is auto-detected. Each row needs a p-value or a
t statistic. Where both are present the reported p-value is used and the t
statistic is ignored. t statistics are converted with the two-sided normal
formula and marked ``converted_from_t``.

Numbers are parsed with a strict grammar (decimal point, optional exponent),
independent of the process locale.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .estimators import NOT_ROUNDED, Origin, PValueSample, t_to_p

__all__ = [
    "IngestError",
    "IngestResult",
    "RecordSchema",
    "read_csv",
    "write_csv",
    "summarize",
    "read_written_csv",
    "report_json",
]

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^[+-]?\d+$")


class IngestError(ValueError):
    """The file cannot be turned into a sample; ``report`` lists the rejected rows."""

    def __init__(self, message: str, report: Optional[dict] = None):
        super().__init__(message)
        self.report = report or {"error": message, "rejected": []}


@dataclass(frozen=True)
class RecordSchema:
    """Column names in the input file; ``None`` means the column is not used."""

    p: Optional[str] = "p"
    t: Optional[str] = None
    cluster_id: Optional[str] = None
    rounding_digits: Optional[str] = None

    def to_dict(self) -> dict:
        return {"p": self.p, "t": self.t, "cluster_id": self.cluster_id, "rounding_digits": self.rounding_digits}


@dataclass(frozen=True)
class IngestResult:
    sample: PValueSample
    total: int
    rejected: list = field(default_factory=list)  # {"line", "reason"}

    @property
    def parsed(self) -> int:
        return self.sample.n

    def report(self) -> dict:
        return {"total": self.total, "parsed": self.parsed, "rejected": list(self.rejected)}


def _parse_float(text: str) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    if not _NUMBER.match(text):
        raise ValueError(f"not a number: {text!r}")
    return float(text)


def read_csv(path, schema: RecordSchema = RecordSchema()) -> IngestResult:
    """Read a record file into a validated :class:`PValueSample`.

    Rows that cannot be used are collected with their line numbers (the
    header is line 1) and reasons; ``parsed + len(rejected) == total``.

    Raises
    ------
    IngestError
        If the file is unreadable, none of the configured columns exist or
        every row is rejected.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    col = {}
    for key in ("p", "t", "cluster_id", "rounding_digits"):
        name = getattr(schema, key)
        if name is None:
            continue
        if name not in header:
            if key in ("p", "t"):
                continue
            raise IngestError(f"column {name!r} not found in {path}; header is {header}")
        col[key] = header.index(name)
    if "p" not in col and "t" not in col:
        raise IngestError(f"no usable p or t column in {path}; header is {header}")

    values, clusters, origins, digits, rejected = [], [], [], [], []
    body = rows[1:]
    for offset, row in enumerate(body):
        line = offset + 2
        if not any(cell.strip() for cell in row):
            rejected.append({"line": line, "reason": "empty row"})
            continue
        if len(row) != len(header):
            rejected.append({"line": line, "reason": f"expected {len(header)} fields, found {len(row)}"})
            continue
        try:
            p = _parse_float(row[col["p"]]) if "p" in col else None
            t = _parse_float(row[col["t"]]) if "t" in col and p is None else None
        except ValueError as exc:
            rejected.append({"line": line, "reason": str(exc)})
            continue
        d = NOT_ROUNDED
        if "rounding_digits" in col:
            text = row[col["rounding_digits"]].strip()
            if text:
                if not _INTEGER.match(text) or int(text) < NOT_ROUNDED:
                    rejected.append({"line": line, "reason": f"invalid rounding digits {text!r}"})
                    continue
                d = int(text)
        if p is not None:
            if not (0.0 < p <= 1.0 or (p == 0.0 and d >= 0)):
                rejected.append({"line": line, "reason": "out of (0,1]"})
                continue
            origin = Origin.REPORTED_P
        elif t is not None:
            if not np.isfinite(t):
                rejected.append({"line": line, "reason": "t statistic not finite"})
                continue
            p = float(t_to_p(t))
            if p <= 0.0:
                rejected.append({"line": line, "reason": "t statistic too large, p-value underflows"})
                continue
            origin = Origin.CONVERTED_FROM_T
        else:
            rejected.append({"line": line, "reason": "neither p nor t present"})
            continue
        if "cluster_id" in col:
            label = row[col["cluster_id"]].strip()
            if not label:
                rejected.append({"line": line, "reason": "missing cluster label"})
                continue
            clusters.append(label)
        values.append(p)
        origins.append(origin.value)
        digits.append(d)

    total = len(body)
    if not values:
        raise IngestError(
            f"all {total} rows of {path} were rejected",
            {"error": "all rows rejected", "total": total, "parsed": 0, "rejected": rejected},
        )
    sample = PValueSample(
        np.array(values),
        cluster_id=clusters if "cluster_id" in col else None,
        origin=origins,
        rounding_digits=np.array(digits) if "rounding_digits" in col else None,
    )
    return IngestResult(sample, total, rejected)


def write_csv(sample: PValueSample, path) -> Path:
    """Write a sample so that :func:`read_csv` with the full schema restores it.

    Columns: ``p``, ``origin``, then ``cluster_id`` and ``rounding_digits``
    when present. Values are written with ``repr`` so they round-trip exactly.
    """
    path = Path(path)
    header = ["p", "origin"]
    if sample.cluster_id is not None:
        header.append("cluster_id")
    if sample.rounding_digits is not None:
        header.append("rounding_digits")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(sample.n):
            row = [repr(float(sample.values[i])), sample.origin[i]]
            if sample.cluster_id is not None:
                row.append(sample.cluster_id[i])
            if sample.rounding_digits is not None:
                row.append(int(sample.rounding_digits[i]))
            w.writerow(row)
    return path


def read_written_csv(path) -> PValueSample:
    """Inverse of :func:`write_csv`, restoring the origin column as well."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    res = read_csv(
        path,
        RecordSchema(
            p="p",
            cluster_id="cluster_id" if "cluster_id" in header else None,
            rounding_digits="rounding_digits" if "rounding_digits" in header else None,
        ),
    )
    with open(path, newline="", encoding="utf-8") as fh:
        origin = [r["origin"] for r in csv.DictReader(fh)]
    s = res.sample
    return PValueSample(s.values, s.cluster_id, origin, s.rounding_digits)


def summarize(sample: PValueSample) -> dict:
    """Counts used to describe a sample of p-values."""
    v = sample.values
    rounded = int(np.sum(sample.rounding_digits >= 0)) if sample.rounding_digits is not None else 0
    return {
        "n": int(v.size),
        "n_in_0.04_0.05": int(np.sum((v >= 0.04) & (v <= 0.05))),
        "n_in_0_0.15": int(np.sum((v > 0.0) & (v <= 0.15))),
        "n_converted_from_t": int(np.sum(sample.origin == Origin.CONVERTED_FROM_T.value)) if v.size else 0,
        "n_clusters": int(np.unique(sample.cluster_id).size) if sample.cluster_id is not None else 0,
        "n_rounded": rounded,
        "share_rounded": rounded / v.size if v.size else 0.0,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
