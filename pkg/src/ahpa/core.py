"""Shared domain types, autoscaler configuration, and the error taxonomy.

Everything downstream speaks in terms of two currencies defined here:
uniformly gridded :class:`TimeSeries` (one sample per step, minute
resolution) and the :class:`AutoscalerSpec` that mirrors the scaling
policy parameters a deployment would be configured with.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from enum import Enum
from functools import cached_property

import numpy as np

__all__ = [
    "MetricKind",
    "ScaleStrategy",
    "ErrorKind",
    "EngineError",
    "TimeSeries",
    "CronRule",
    "AutoscalerSpec",
    "validate_spec",
    "load_spec",
    "save_spec",
    "parse_timestamp_to_minutes",
    "minutes_to_rfc3339",
]


class MetricKind(Enum):
    """What a series of samples measures."""

    CPU_UTILIZATION_PERCENT = "cpu_utilization_percent"
    QPS = "qps"
    RT_MILLISECONDS = "rt_milliseconds"
    MEMORY_PERCENT = "memory_percent"
    CUSTOM = "custom"


#: Metrics expressed as percentages of capacity.
PERCENT_METRICS = frozenset(
    {MetricKind.CPU_UTILIZATION_PERCENT, MetricKind.MEMORY_PERCENT}
)

#: Metrics that cannot meaningfully go below zero.
NONNEGATIVE_METRICS = PERCENT_METRICS | {MetricKind.QPS}


class ScaleStrategy(Enum):
    AUTO = "auto"
    OBSERVER = "observer"


class ErrorKind(Enum):
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"
    INVALID_CONFIG = "INVALID_CONFIG"
    UNSTABLE_QUEUE = "UNSTABLE_QUEUE"
    NO_FEASIBLE_PODS = "NO_FEASIBLE_PODS"
    IO_FAILURE = "IO_FAILURE"
    DEGENERATE_SERIES = "DEGENERATE_SERIES"


class EngineError(Exception):
    """Engine failure carrying exactly one :class:`ErrorKind`."""

    def __init__(self, kind: ErrorKind, detail: str):
        super().__init__(f"{kind.value}: {detail}")
        self.kind = kind
        self.detail = detail


def parse_timestamp_to_minutes(text: str) -> int:
    """Parse an RFC3339 timestamp or integer epoch-seconds into epoch minutes.

    Sub-minute precision is floored away; the engine's native resolution
    is one minute.
    """
    text = text.strip()
    try:
        return int(float(text)) // 60
    except ValueError:
        pass
    try:
        # Python 3.10 fromisoformat does not accept a trailing Z.
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp()) // 60


def minutes_to_rfc3339(minute: int) -> str:
    dt = datetime.fromtimestamp(minute * 60, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly gridded metric samples.

    Attributes:
        start: epoch minutes (UTC) of the first sample.
        values: one entry per grid point; ``None`` marks a missing sample.
        step: grid spacing in minutes.
        metric: what the values measure.
    """

    start: int
    values: tuple
    step: int = 1
    metric: MetricKind = MetricKind.CUSTOM

    def __post_init__(self):
        if not isinstance(self.values, tuple):
            object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) < 1:
            raise EngineError(ErrorKind.DEGENERATE_SERIES, "series has no samples")
        if self.step <= 0:
            raise EngineError(ErrorKind.INVALID_CONFIG, "step must be positive")
        arr = self.to_array()
        present = arr[~np.isnan(arr)]
        if present.size and not np.all(np.isfinite(present)):
            raise EngineError(
                ErrorKind.DEGENERATE_SERIES, "series contains non-finite values"
            )
        if self.metric in PERCENT_METRICS and present.size and present.min() < 0:
            raise EngineError(
                ErrorKind.DEGENERATE_SERIES,
                f"{self.metric.value} values must be >= 0",
            )

    @cached_property
    def _array(self) -> np.ndarray:
        return np.array(
            [np.nan if v is None else float(v) for v in self.values], dtype=float
        )

    def to_array(self) -> np.ndarray:
        """Values as a float array with NaN for missing samples (copy)."""
        return self._array.copy()

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> int:
        """Epoch minute one step past the last sample."""
        return self.start + len(self.values) * self.step

    def minutes(self) -> np.ndarray:
        """Epoch minute of every grid point."""
        return self.start + self.step * np.arange(len(self.values))

    @property
    def missing_count(self) -> int:
        return sum(1 for v in self.values if v is None)

    @property
    def has_missing(self) -> bool:
        return self.missing_count > 0

    def slice(self, i: int, j: int) -> "TimeSeries":
        """Sub-series covering grid indices [i, j)."""
        if not 0 <= i < j <= len(self.values):
            raise EngineError(
                ErrorKind.INVALID_CONFIG, f"invalid slice [{i}, {j}) of {len(self)}"
            )
        return TimeSeries(
            start=self.start + i * self.step,
            values=self.values[i:j],
            step=self.step,
            metric=self.metric,
        )

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(
            start=self.start, values=tuple(values), step=self.step, metric=self.metric
        )


def _parse_minute_of_day(text: str) -> int:
    hh, mm = text.strip().split(":")
    h, m = int(hh), int(mm)
    if not (0 <= h < 24 and 0 <= m < 60):
        raise ValueError(f"invalid time of day {text!r}")
    return h * 60 + m


@dataclass(frozen=True)
class CronRule:
    """Daily scheduling window that forces replica bounds while active.

    ``window`` uses the form ``HH:MM-HH:MM`` (UTC); a window whose end
    precedes its start wraps past midnight.
    """

    window: str
    forced_min: int
    forced_max: int

    def bounds_minutes(self) -> tuple:
        start_txt, end_txt = self.window.split("-")
        return _parse_minute_of_day(start_txt), _parse_minute_of_day(end_txt)

    def active_at(self, epoch_minute: int) -> bool:
        start, end = self.bounds_minutes()
        mod = epoch_minute % 1440
        if start <= end:
            return start <= mod < end
        return mod >= start or mod < end


@dataclass(frozen=True)
class AutoscalerSpec:
    """Scaling policy for one target deployment.

    Exactly one of ``average_utilization`` (percent threshold) or
    ``target_rt_ms`` (response-time SLA) must be set. ``scale_target_ref``
    is an opaque label; no live cluster objects are involved.
    """

    scale_target_ref: str
    metric: MetricKind
    max_replicas: int
    min_replicas: int = 1
    average_utilization: float | None = None
    target_rt_ms: float | None = None
    scale_strategy: ScaleStrategy = ScaleStrategy.AUTO
    instance_bounds: tuple = ()
    cron_rules: tuple = ()
    pending_time: int = 1
    action_interval: int = 3

    def __post_init__(self):
        object.__setattr__(self, "instance_bounds", tuple(map(tuple, self.instance_bounds)))
        object.__setattr__(self, "cron_rules", tuple(self.cron_rules))

    @property
    def target_fraction(self) -> float:
        """Utilization threshold as a fraction of capacity."""
        if self.average_utilization is None:
            raise EngineError(
                ErrorKind.INVALID_CONFIG, "spec has no utilization target"
            )
        return self.average_utilization / 100.0


def validate_spec(spec: AutoscalerSpec) -> AutoscalerSpec:
    """Return ``spec`` unchanged iff every invariant holds.

    Raises:
        EngineError: INVALID_CONFIG naming the first violated rule.
    """

    def bad(rule: str):
        raise EngineError(ErrorKind.INVALID_CONFIG, rule)

    if spec.min_replicas < 1:
        bad(f"min_replicas must be >= 1, got {spec.min_replicas}")
    if spec.max_replicas < spec.min_replicas:
        bad(
            f"min_replicas ({spec.min_replicas}) must not exceed "
            f"max_replicas ({spec.max_replicas})"
        )
    has_util = spec.average_utilization is not None
    has_rt = spec.target_rt_ms is not None
    if has_util and has_rt:
        bad("average_utilization and target_rt_ms are mutually exclusive")
    if not has_util and not has_rt:
        bad("one of average_utilization or target_rt_ms is required")
    if has_util:
        if spec.average_utilization <= 0:
            bad(f"average_utilization must be positive, got {spec.average_utilization}")
        if spec.metric in PERCENT_METRICS and spec.average_utilization > 100:
            bad(
                f"average_utilization must be <= 100 for {spec.metric.value}, "
                f"got {spec.average_utilization}"
            )
    if has_rt and spec.target_rt_ms <= 0:
        bad(f"target_rt_ms must be positive, got {spec.target_rt_ms}")
    if spec.pending_time < 0:
        bad(f"pending_time must be >= 0, got {spec.pending_time}")
    if spec.action_interval < 1:
        bad(f"action_interval must be >= 1 minute, got {spec.action_interval}")
    for lo, hi in spec.instance_bounds:
        if lo >= hi:
            bad(f"instance_bounds window ({lo}, {hi}) is empty")
    for rule in spec.cron_rules:
        try:
            rule.bounds_minutes()
        except ValueError as exc:
            bad(f"cron window {rule.window!r}: {exc}")
        if rule.forced_min > rule.forced_max:
            bad(
                f"cron rule {rule.window!r} has forced_min "
                f"{rule.forced_min} > forced_max {rule.forced_max}"
            )
        if rule.forced_min < 0:
            bad(f"cron rule {rule.window!r} has negative forced_min")
    return spec


# --- config file round trip --------------------------------------------------

_SECTION = "autoscaler"


def _format_instance_bounds(bounds) -> str:
    return ";".join(f"{lo}-{hi}" for lo, hi in bounds)


def _parse_instance_bounds(text: str) -> tuple:
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        lo, hi = part.split("-")
        out.append((int(lo), int(hi)))
    return tuple(out)


def _format_cron_rules(rules) -> str:
    return ";".join(f"{r.window},{r.forced_min},{r.forced_max}" for r in rules)


def _parse_cron_rules(text: str) -> tuple:
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        window, fmin, fmax = part.split(",")
        out.append(CronRule(window=window.strip(), forced_min=int(fmin), forced_max=int(fmax)))
    return tuple(out)


def save_spec(spec: AutoscalerSpec, path) -> None:
    """Write ``spec`` as a flat key = value config file."""
    parser = configparser.ConfigParser()
    section = {
        "scale_target_ref": spec.scale_target_ref,
        "metric": spec.metric.value,
        "max_replicas": str(spec.max_replicas),
        "min_replicas": str(spec.min_replicas),
        "scale_strategy": spec.scale_strategy.value,
        "pending_time": str(spec.pending_time),
        "action_interval": str(spec.action_interval),
    }
    if spec.average_utilization is not None:
        section["average_utilization"] = repr(float(spec.average_utilization))
    if spec.target_rt_ms is not None:
        section["target_rt_ms"] = repr(float(spec.target_rt_ms))
    if spec.instance_bounds:
        section["instance_bounds"] = _format_instance_bounds(spec.instance_bounds)
    if spec.cron_rules:
        section["cron_rules"] = _format_cron_rules(spec.cron_rules)
    parser[_SECTION] = section
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_spec(path) -> AutoscalerSpec:
    """Parse a config file written by :func:`save_spec` (or by hand)."""
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise EngineError(ErrorKind.IO_FAILURE, f"cannot read config {path}: {exc}")
    except configparser.Error as exc:
        raise EngineError(ErrorKind.INVALID_CONFIG, f"malformed config {path}: {exc}")
    if _SECTION not in parser:
        raise EngineError(
            ErrorKind.INVALID_CONFIG, f"config {path} lacks an [{_SECTION}] section"
        )
    sec = parser[_SECTION]
    known = {f.name for f in fields(AutoscalerSpec)}
    unknown = set(sec) - known
    if unknown:
        raise EngineError(
            ErrorKind.INVALID_CONFIG, f"unknown config keys: {sorted(unknown)}"
        )
    try:
        spec = AutoscalerSpec(
            scale_target_ref=sec.get("scale_target_ref", "default"),
            metric=MetricKind(sec.get("metric", "custom")),
            max_replicas=sec.getint("max_replicas"),
            min_replicas=sec.getint("min_replicas", fallback=1),
            average_utilization=sec.getfloat("average_utilization", fallback=None),
            target_rt_ms=sec.getfloat("target_rt_ms", fallback=None),
            scale_strategy=ScaleStrategy(sec.get("scale_strategy", "auto")),
            instance_bounds=_parse_instance_bounds(sec.get("instance_bounds", "")),
            cron_rules=_parse_cron_rules(sec.get("cron_rules", "")),
            pending_time=sec.getint("pending_time", fallback=1),
            action_interval=sec.getint("action_interval", fallback=3),
        )
    except (ValueError, TypeError) as exc:
        raise EngineError(ErrorKind.INVALID_CONFIG, f"config {path}: {exc}")
    return validate_spec(spec)
