"""Domain types and the series-level plumbing shared by every stage."""
from __future__ import annotations

import datetime as dt
import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class MMDError(ValueError):
    """Base class for input errors raised by this package."""


class SeriesTooShortError(MMDError):
    pass


class ValidationError(MMDError):
    pass


class UndefinedCorrelationError(MMDError):
    """Raised when one side of a correlation has zero variance."""


class Priority(enum.IntEnum):
    P1 = 0
    P2 = 1
    P3 = 2
    P4 = 3

    @classmethod
    def parse(cls, value: "Priority | str | int | None") -> "Priority":
        if value is None or value == "":
            return DEFAULT_PRIORITY
        if isinstance(value, Priority):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown priority {value!r}, expected P1..P4") from None


DEFAULT_PRIORITY = Priority.P4


def _as_date(value) -> np.datetime64:
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, (dt.date, dt.datetime)):
        return np.datetime64(value.isoformat()[:10], "D")
    try:
        return np.datetime64(str(value).strip(), "D")
    except ValueError:
        raise ValidationError(f"unparseable date {value!r}") from None


def canonical_dimensions(dims: Mapping[str, str] | None) -> tuple[tuple[str, str], ...]:
    if not dims:
        return ()
    return tuple(sorted((str(k), str(v)) for k, v in dims.items()))


def series_key(metric_id: str, dimensions: Mapping[str, str] | Sequence[tuple[str, str]] | None) -> str:
    """Canonical identity string: ``metric_id|k1=v1;k2=v2`` with sorted keys."""
    if dimensions is None or isinstance(dimensions, (dict, Mapping)):
        pairs = canonical_dimensions(dimensions)
    else:
        pairs = tuple(sorted(dimensions))
    return metric_id + "|" + ";".join(f"{k}={v}" for k, v in pairs)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Observation(NamedTuple):
    """One ingested row."""

    metric_id: str
    dimensions: Mapping[str, str]
    date: object
    value: float | None
    priority: object = None


@dataclass(frozen=True, eq=False)
class MetricSeries:
    """A single metric slice: daily values plus identity metadata.

    ``values`` may hold NaN as the missing marker until :func:`fill_missing`
    has run. Arrays are made read-only on construction.
    """

    metric_id: str
    timestamps: np.ndarray
    values: np.ndarray
    dimensions: tuple[tuple[str, str], ...] = ()
    priority: Priority = DEFAULT_PRIORITY
    period_w: int | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps).astype("datetime64[D]")
        vals = np.asarray(self.values, dtype=float)
        if ts.ndim != 1 or vals.shape != ts.shape:
            raise ValidationError("timestamps and values must be 1-d and of equal length")
        if ts.size > 1 and np.any(np.diff(ts).astype(int) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "values", _frozen(vals))
        if isinstance(self.dimensions, Mapping):
            object.__setattr__(self, "dimensions", canonical_dimensions(self.dimensions))
        else:
            object.__setattr__(self, "dimensions", tuple(sorted(tuple(p) for p in self.dimensions)))
        object.__setattr__(self, "priority", Priority.parse(self.priority))
        if self.period_w is not None:
            w = int(self.period_w)
            if not 2 <= w <= len(vals) // 2:
                raise ValidationError(f"period_w={w} outside [2, {len(vals) // 2}]")
            object.__setattr__(self, "period_w", w)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def key(self) -> str:
        return series_key(self.metric_id, self.dimensions)

    @property
    def dims(self) -> dict[str, str]:
        return dict(self.dimensions)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.values).sum())

    def records(self) -> list[Observation]:
        dims = self.dims
        return [
            Observation(self.metric_id, dims, t, None if np.isnan(v) else float(v), self.priority)
            for t, v in zip(self.timestamps, self.values)
        ]

    def truncate(self, end: int) -> "MetricSeries":
        """Prefix ``[0, end)``; drops a cached period that no longer fits."""
        w = self.period_w if self.period_w is not None and self.period_w <= end // 2 else None
        return MetricSeries(
            self.metric_id, self.timestamps[:end], self.values[:end],
            self.dimensions, self.priority, w,
        )

    def with_period(self, w: int | None) -> "MetricSeries":
        return MetricSeries(self.metric_id, self.timestamps, self.values,
                            self.dimensions, self.priority, w)

    def __eq__(self, other):
        if not isinstance(other, MetricSeries):
            return NotImplemented
        return (
            self.metric_id == other.metric_id
            and self.dimensions == other.dimensions
            and self.priority == other.priority
            and self.period_w == other.period_w
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.trend + self.seasonal + self.residual


@dataclass(frozen=True)
class AnomalyVerdict:
    metric_id: str
    dimensions: tuple[tuple[str, str], ...]
    date: str
    band_low: float
    band_high: float
    last_value: float
    is_anomaly: bool
    severity: float
    exceed_streak: int
    mu_hat: float
    sigma_hat: float
    period_w: int | None = None

    @property
    def key(self) -> str:
        return series_key(self.metric_id, self.dimensions)

    def to_dict(self) -> dict:
        return {
            "metric_id": self.metric_id,
            "dimensions": dict(self.dimensions),
            "date": self.date,
            "band_low": self.band_low,
            "band_high": self.band_high,
            "last_value": self.last_value,
            "is_anomaly": self.is_anomaly,
            "severity": self.severity,
            "exceed_streak": self.exceed_streak,
            "mu_hat": self.mu_hat,
            "sigma_hat": self.sigma_hat,
            "period_w": self.period_w,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnomalyVerdict":
        return cls(
            metric_id=str(d["metric_id"]),
            dimensions=canonical_dimensions(d.get("dimensions") or {}),
            date=str(d["date"]),
            band_low=float(d["band_low"]),
            band_high=float(d["band_high"]),
            last_value=float(d["last_value"]),
            is_anomaly=bool(d["is_anomaly"]),
            severity=float(d["severity"]),
            exceed_streak=int(d["exceed_streak"]),
            mu_hat=float(d["mu_hat"]),
            sigma_hat=float(d["sigma_hat"]),
            period_w=None if d.get("period_w") is None else int(d["period_w"]),
        )


@dataclass(frozen=True)
class LabelRecord:
    """One labeler's judgement of one point.

    ``date=None`` marks a viewing record: the labeler saw the series but
    flagged nothing on it.
    """

    metric_id: str
    date: str | None
    labeler_id: str
    is_alert: bool
    dimensions: tuple[tuple[str, str], ...] = field(default=())

    @property
    def key(self) -> str:
        return series_key(self.metric_id, self.dimensions)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def validate_series(raw: Iterable[Observation] | MetricSeries) -> MetricSeries:
    """Build a clean daily series from ingested rows.

    Rows are sorted by date, duplicate dates resolved last-write-wins (in
    input order) and calendar gaps filled with NaN markers.
    """
    if isinstance(raw, MetricSeries):
        records = raw.records()
        cached_w = raw.period_w
    else:
        records = list(raw)
        cached_w = None
    if not records:
        raise ValidationError("empty input")

    metric_id = records[0].metric_id
    first_dims = records[0].dimensions
    dims = canonical_dimensions(first_dims)
    raw_dates = [rec.date for rec in records]
    if all(type(d) is str for d in raw_dates):
        try:
            parsed = np.array(raw_dates, dtype="datetime64[D]")  # one vectorized parse
        except ValueError:
            parsed = [_as_date(d) for d in raw_dates]  # re-parse to name the bad one
    else:
        parsed = [_as_date(d) for d in raw_dates]
    days = np.asarray(parsed, dtype="datetime64[D]").astype(np.int64).tolist()
    priority = None
    by_date: dict[int, float] = {}  # days since the epoch -> value
    conflicts = 0
    for rec, d in zip(records, days):
        if rec.metric_id != metric_id or (rec.dimensions is not first_dims
                                          and canonical_dimensions(rec.dimensions) != dims):
            raise ValidationError(
                f"mixed series identities: {series_key(metric_id, dims)} vs "
                f"{series_key(rec.metric_id, rec.dimensions)}"
            )
        v = np.nan if rec.value is None else float(rec.value)
        if d in by_date and not (by_date[d] == v or (np.isnan(by_date[d]) and np.isnan(v))):
            conflicts += 1
        by_date[d] = v
        if rec.priority not in (None, ""):
            priority = rec.priority
    if conflicts:
        logger.warning("%s: %d conflicting duplicate timestamp(s), kept last value",
                       series_key(metric_id, dims), conflicts)

    observed = np.fromiter(by_date, dtype=np.int64, count=len(by_date))
    first = int(observed.min())
    full = np.arange(first, int(observed.max()) + 1).astype("datetime64[D]")
    values = np.full(full.shape, np.nan)
    values[observed - first] = np.fromiter(by_date.values(), dtype=float, count=len(by_date))
    if cached_w is not None and not 2 <= cached_w <= len(values) // 2:
        cached_w = None
    return MetricSeries(metric_id, full, values, dims, Priority.parse(priority), cached_w)


def fill_missing(series: MetricSeries) -> MetricSeries:
    """Interpolate internal gaps linearly; drop leading/trailing gaps."""
    v = series.values
    ok = ~np.isnan(v)
    if ok.sum() < 2:
        raise ValidationError(f"{series.key}: fewer than 2 observed values")
    if ok.all():
        return series
    first, last = np.flatnonzero(ok)[[0, -1]]
    v = v[first: last + 1]
    ok = ok[first: last + 1]
    idx = np.arange(v.shape[0])
    filled = v.copy()
    filled[~ok] = np.interp(idx[~ok], idx[ok], v[ok])
    w = series.period_w
    if w is not None and w > filled.shape[0] // 2:
        w = None
    return MetricSeries(series.metric_id, series.timestamps[first: last + 1], filled,
                        series.dimensions, series.priority, w)


def pearson_corr(a, b) -> float:
    """Pearson product-moment correlation of two equal-length vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be 1-d vectors of equal length")
    if a.shape[0] < 2:
        raise ValueError("need at least 2 points")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    scale = max(np.abs(a).max(), np.abs(b).max(), 1.0)
    if sa <= 1e-12 * scale * np.sqrt(a.shape[0]) or sb <= 1e-12 * scale * np.sqrt(b.shape[0]):
        raise UndefinedCorrelationError("zero variance input")
    r = float(np.dot(da, db) / (sa * sb))
    return min(1.0, max(-1.0, r))
