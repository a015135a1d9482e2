"""Trace file ingestion and series cleaning.

Reads raw metric rows from CSV or JSON-lines files, buckets them onto a
uniform minute grid, and repairs gaps and outliers so the forecasting
stages always see a dense, finite series.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    EngineError,
    ErrorKind,
    MetricKind,
    TimeSeries,
    parse_timestamp_to_minutes,
)

__all__ = ["RawTrace", "read_trace", "regularize", "repair", "truncate_retention"]

#: Series older than this many minutes before the newest sample are dropped
#: before processing (typical metric retention is seven days).
DEFAULT_RETENTION_MINUTES = 7 * 24 * 60

DEFAULT_MAX_MISSING_RATIO = 0.3
DEFAULT_Z_THRESHOLD = 5.0

#: Consistency factor making the median absolute deviation comparable to a
#: standard deviation under normal noise.
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class RawTrace:
    """Parsed rows exactly as found on disk: unordered, possibly duplicated."""

    rows: tuple  # of (epoch_minute, metric_name, value)
    source_path: str
    skipped_rows: int = 0


def _parse_csv_rows(fh, metric_name: str):
    rows, skipped = [], 0
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return rows, skipped
    if [c.strip().lower() for c in header[:2]] != ["timestamp", "value"]:
        # Tolerate a missing header by treating the first line as data.
        reader = iter([header] + list(reader))
    for line in reader:
        if not line or all(not c.strip() for c in line):
            continue
        try:
            ts = parse_timestamp_to_minutes(line[0])
            value = float(line[1])
            if not math.isfinite(value):
                raise ValueError("non-finite value")
        except (ValueError, IndexError):
            skipped += 1
            continue
        rows.append((ts, metric_name, value))
    return rows, skipped


def _parse_jsonl_rows(fh, metric_name: str):
    rows, skipped = [], 0
    for line in fh:
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            ts = obj["ts"]
            ts = parse_timestamp_to_minutes(ts if isinstance(ts, str) else str(ts))
            value = float(obj["value"])
            if not math.isfinite(value):
                raise ValueError("non-finite value")
        except (ValueError, KeyError, TypeError, json.JSONDecodeError):
            skipped += 1
            continue
        rows.append((ts, metric_name, value))
    return rows, skipped


def read_trace(path, metric: MetricKind) -> RawTrace:
    """Read a metric trace file into a :class:`RawTrace`.

    Accepts CSV with a ``timestamp,value`` header (RFC3339 or epoch-second
    timestamps) or JSON lines with ``ts`` and ``value`` keys. Malformed rows
    are skipped and counted, never fatal.

    Raises:
        EngineError: IO_FAILURE if the file cannot be read,
            DEGENERATE_SERIES if no row parses.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.read(1)
            fh.seek(0)
            if first == "{":
                rows, skipped = _parse_jsonl_rows(fh, metric.value)
            else:
                rows, skipped = _parse_csv_rows(fh, metric.value)
    except OSError as exc:
        raise EngineError(ErrorKind.IO_FAILURE, f"cannot read trace {path}: {exc}")
    if not rows:
        raise EngineError(
            ErrorKind.DEGENERATE_SERIES, f"no parseable rows in {path}"
        )
    return RawTrace(rows=tuple(rows), source_path=str(path), skipped_rows=skipped)


def regularize(raw: RawTrace, step: int = 1, metric: MetricKind = MetricKind.CUSTOM) -> TimeSeries:
    """Bucket raw rows onto the uniform grid spanning [min_ts, max_ts].

    Rows landing in one bucket are averaged; buckets with no row become
    missing samples. Grid length is ``(max_ts - min_ts) // step + 1``.
    """
    if not raw.rows:
        raise EngineError(ErrorKind.DEGENERATE_SERIES, "raw trace has no rows")
    if step < 1:
        raise EngineError(ErrorKind.INVALID_CONFIG, "step must be >= 1 minute")
    ts = np.array([r[0] for r in raw.rows], dtype=np.int64)
    vals = np.array([r[2] for r in raw.rows], dtype=float)
    t0, t1 = int(ts.min()), int(ts.max())
    n = (t1 - t0) // step + 1
    if n < 1:
        raise EngineError(ErrorKind.DEGENERATE_SERIES, "grid would be empty")
    idx = (ts - t0) // step
    sums = np.bincount(idx, weights=vals, minlength=n)
    counts = np.bincount(idx, minlength=n)
    values = [
        (sums[i] / counts[i]) if counts[i] else None for i in range(n)
    ]
    return TimeSeries(start=t0, values=tuple(values), step=step, metric=metric)


def truncate_retention(series: TimeSeries, retention_minutes: int = DEFAULT_RETENTION_MINUTES) -> TimeSeries:
    """Drop samples older than ``retention_minutes`` before the newest one."""
    if retention_minutes <= 0:
        raise EngineError(ErrorKind.INVALID_CONFIG, "retention must be positive")
    horizon = series.end - retention_minutes
    if series.start >= horizon:
        return series
    first = (horizon - series.start + series.step - 1) // series.step
    return series.slice(first, len(series))


def _interpolate_missing(arr: np.ndarray) -> np.ndarray:
    """Fill NaN gaps linearly; edge gaps take the nearest present value."""
    out = arr.copy()
    present = ~np.isnan(out)
    idx = np.arange(len(out))
    out[~present] = np.interp(idx[~present], idx[present], out[present])
    return out


def _robust_zscores(arr: np.ndarray) -> np.ndarray:
    """|x - median| / scale with an MAD scale, falling back to the mean
    absolute deviation when more than half the samples tie at the median."""
    med = float(np.median(arr))
    dev = np.abs(arr - med)
    mad = float(np.median(dev))
    if mad > 0:
        return dev / (MAD_SCALE * mad)
    mean_ad = float(dev.mean())
    if mean_ad > 0:
        return dev / mean_ad
    return np.zeros_like(arr)


def _replace_outliers_once(arr: np.ndarray, z_threshold: float) -> np.ndarray:
    z = _robust_zscores(arr)
    flagged = z > z_threshold
    if not flagged.any() or flagged.all():
        return arr
    clean = arr.copy()
    clean[flagged] = np.nan
    return _interpolate_missing(clean)


def repair(
    series: TimeSeries,
    max_missing_ratio: float = DEFAULT_MAX_MISSING_RATIO,
    z_threshold: float = DEFAULT_Z_THRESHOLD,
) -> TimeSeries:
    """Fill missing samples and replace robust-z outliers.

    Missing values are linearly interpolated between the nearest present
    neighbors (edges take the nearest present value). Samples whose robust
    z-score exceeds ``z_threshold`` are replaced by the interpolation of
    their neighbors; the replacement pass iterates until the series stops
    changing, which makes repair idempotent. Samples the procedure never
    flags are returned bit-identical.

    Raises:
        EngineError: INSUFFICIENT_DATA when the missing ratio exceeds
            ``max_missing_ratio`` or fewer than 2 samples are present.
    """
    arr = series.to_array()
    present = ~np.isnan(arr)
    n = len(arr)
    if present.sum() < 2:
        raise EngineError(
            ErrorKind.INSUFFICIENT_DATA,
            f"need at least 2 present samples, have {int(present.sum())}",
        )
    missing_ratio = 1.0 - present.sum() / n
    if missing_ratio > max_missing_ratio:
        raise EngineError(
            ErrorKind.INSUFFICIENT_DATA,
            f"missing ratio {missing_ratio:.3f} exceeds {max_missing_ratio}",
        )
    filled = _interpolate_missing(arr)
    seen = {filled.tobytes()}
    for _ in range(50):
        nxt = _replace_outliers_once(filled, z_threshold)
        key = nxt.tobytes()
        if key in seen:
            filled = nxt
            break
        seen.add(key)
        filled = nxt
    return series.with_values(tuple(float(v) for v in filled))
