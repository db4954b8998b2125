"""Trace CSV format: ``time_us,pl_counts_per_us`` with an optional ``sigma`` column."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..sequences import Trace

HEADER = ["time_us", "pl_counts_per_us"]
SIGMA = "sigma"


class TraceFormatError(ValueError):
    pass


def ingest_trace(path: str | Path, fmt: str = "csv", exposure: float = 1.0) -> Trace:
    if fmt != "csv":
        raise TraceFormatError(f"unsupported trace format {fmt!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TraceFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header not in (HEADER, HEADER + [SIGMA]):
        raise TraceFormatError(f"{path}: header must be {','.join(HEADER)}[,{SIGMA}], got {','.join(header)}")
    ncol = len(header)
    times, pl, sigma = [], [], []
    for i, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != ncol:
            raise TraceFormatError(f"{path}: row {i} has {len(row)} fields, expected {ncol}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise TraceFormatError(f"{path}: row {i} is not numeric: {row}") from None
        if not np.all(np.isfinite(vals)):
            raise TraceFormatError(f"{path}: row {i} has non-finite values")
        if times and vals[0] <= times[-1]:
            raise TraceFormatError(f"{path}: row {i}: time {vals[0]} does not increase")
        if vals[1] < 0:
            raise TraceFormatError(f"{path}: row {i}: negative PL {vals[1]}")
        if ncol == 3 and vals[2] <= 0:
            raise TraceFormatError(f"{path}: row {i}: sigma must be > 0")
        times.append(vals[0])
        pl.append(vals[1])
        if ncol == 3:
            sigma.append(vals[2])
    if not times:
        raise TraceFormatError(f"{path}: no data rows")
    return Trace(np.array(times), np.array(pl), {"source": str(path)}, np.array(sigma) if sigma else None, exposure)


def emit_trace(trace: Trace, path: str | Path) -> Path:
    """Write a trace; floats use the shortest repr, so reading back is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if trace.sigma is None:
            w.writerow(HEADER)
            for t, p in zip(trace.times, trace.pl):
                w.writerow([repr(float(t)), repr(float(p))])
        else:
            w.writerow(HEADER + [SIGMA])
            for t, p, s in zip(trace.times, trace.pl, trace.sigma):
                w.writerow([repr(float(t)), repr(float(p)), repr(float(s))])
    return path
