"""Flat-file formats: observation and label CSVs, JSON-lines records.

Observation rows are ``metric_id, dimensions, date, value[, priority]`` with
dimensions written as ``key=value`` pairs joined by ``;`` (empty for a fully
rolled-up series). A header row whose first cell is ``metric_id`` is
skipped. Label rows are ``metric_id, dimensions, date, labeler_id,
is_alert``; an empty date marks a labeler who viewed the series without
flagging anything.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (LabelRecord, MetricSeries, Observation, Priority, ValidationError, _as_date,
                   canonical_dimensions, series_key)
from .frequency import atomic_write_text
from .rank import FeedbackRecord

OBSERVATION_HEADER = ("metric_id", "dimensions", "date", "value", "priority")
LABEL_HEADER = ("metric_id", "dimensions", "date", "labeler_id", "is_alert")
FEEDBACK_HEADER = ("f_d", "priority", "f_g", "is_valid")

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


@dataclass(frozen=True)
class Diagnostic:
    """A per-row ingestion problem; ``key`` is None when the row has no identity."""

    line: int
    key: str | None
    message: str

    def __str__(self) -> str:
        where = f" ({self.key})" if self.key else ""
        return f"line {self.line}{where}: {self.message}"


def format_dimensions(dims) -> str:
    return ";".join(f"{k}={v}" for k, v in canonical_dimensions(dict(dims)))


def parse_dimensions(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    text = text.strip()
    if not text:
        return out
    for part in text.split(";"):
        key, sep, value = part.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValidationError(f"bad dimension pair {part!r}, expected key=value")
        if key in out:
            raise ValidationError(f"dimension {key!r} given twice")
        out[key] = value
    return out


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _rows(path: str | Path, header: Sequence[str]):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == header[0]:
                continue
            yield lineno, row


# --------------------------------------------------------------------------
# observations
# --------------------------------------------------------------------------

class _RowParser:
    """Observation parsing with per-text caches.

    Dimension strings, dates and priorities repeat on almost every row of a
    warehouse export, so each distinct text is parsed once. Cached
    dimension dicts are shared between rows and must not be mutated.
    """

    def __init__(self):
        self._dims: dict[str, dict[str, str]] = {}
        self._dates: dict[str, str] = {}
        self._prios: dict[str, Priority] = {}
        self._keys: dict[tuple[str, str], str] = {}

    def dims(self, text: str) -> dict[str, str]:
        d = self._dims.get(text)
        if d is None:
            d = self._dims[text] = parse_dimensions(text)
        return d

    def date(self, text: str) -> str:
        d = self._dates.get(text)
        if d is None:
            d = self._dates[text] = str(_as_date(text))
        return d

    def priority(self, text: str) -> Priority:
        p = self._prios.get(text)
        if p is None:
            p = self._prios[text] = Priority.parse(text)
        return p

    def key(self, metric_id: str, dims_text: str) -> str:
        k = self._keys.get((metric_id, dims_text))
        if k is None:
            k = self._keys[(metric_id, dims_text)] = series_key(metric_id, self.dims(dims_text))
        return k

    def observation(self, row: Sequence[str]) -> Observation:
        if len(row) not in (4, 5):
            raise ValidationError(f"expected 4 or 5 columns, got {len(row)}")
        metric_id = row[0].strip()
        if not metric_id:
            raise ValidationError("empty metric_id")
        dims = self.dims(row[1])
        date = self.date(row[2])
        raw = row[3].strip()
        if raw == "":
            value = None  # explicit missing marker
        else:
            try:
                value = float(raw)
            except ValueError:
                raise ValidationError(f"non-numeric value {raw!r}") from None
            if not math.isfinite(value):
                raise ValidationError(f"non-finite value {raw!r}")
        priority = None
        if len(row) == 5 and row[4].strip():
            priority = self.priority(row[4])
        return Observation(metric_id, dims, date, value, priority)


def parse_observation(row: Sequence[str]) -> Observation:
    return _RowParser().observation(row)


def _row_key(parser: _RowParser, row: Sequence[str]) -> str | None:
    if len(row) < 2 or not row[0].strip():
        return None
    try:
        return parser.key(row[0].strip(), row[1])
    except ValidationError:
        return None


def read_observations(path: str | Path) -> tuple[dict[str, list[Observation]], list[Diagnostic]]:
    """Group rows by series identity, collecting per-row diagnostics.

    A series with any malformed row is reported and left out entirely, so a
    partial series is never scored as if it were complete.
    """
    parser = _RowParser()
    groups: dict[str, list[Observation]] = {}
    diagnostics: list[Diagnostic] = []
    failed: set[str] = set()
    for lineno, row in _rows(path, OBSERVATION_HEADER):
        try:
            obs = parser.observation(row)
        except ValidationError as exc:
            key = _row_key(parser, row)
            diagnostics.append(Diagnostic(lineno, key, str(exc)))
            if key is not None:
                failed.add(key)
            continue
        groups.setdefault(parser.key(obs.metric_id, row[1]), []).append(obs)
    for key in failed:
        groups.pop(key, None)
    return groups, diagnostics


def observations_csv(series: Iterable[MetricSeries]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OBSERVATION_HEADER)
    for s in series:
        dims = format_dimensions(s.dimensions)
        for d, v in zip(s.timestamps, s.values):
            writer.writerow([s.metric_id, dims, str(d), "" if np.isnan(v) else repr(float(v)),
                             s.priority.name])
    return buf.getvalue()


# --------------------------------------------------------------------------
# labels and feedback
# --------------------------------------------------------------------------

def read_labels(path: str | Path) -> list[LabelRecord]:
    out = []
    for lineno, row in _rows(path, LABEL_HEADER):
        try:
            if len(row) != 5:
                raise ValidationError(f"expected 5 columns, got {len(row)}")
            date = str(_as_date(row[2])) if row[2].strip() else None
            out.append(LabelRecord(row[0].strip(), date, row[3].strip(), parse_bool(row[4]),
                                   canonical_dimensions(parse_dimensions(row[1]))))
        except ValidationError as exc:
            raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    return out


def labels_csv(labels: Iterable[LabelRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABEL_HEADER)
    for r in labels:
        writer.writerow([r.metric_id, format_dimensions(r.dimensions), r.date or "", r.labeler_id,
                         "true" if r.is_alert else "false"])
    return buf.getvalue()


def read_feedback(path: str | Path) -> list[FeedbackRecord]:
    out = []
    for lineno, row in _rows(path, FEEDBACK_HEADER):
        try:
            if len(row) != 4:
                raise ValidationError(f"expected 4 columns, got {len(row)}")
            out.append(FeedbackRecord(float(row[0]), Priority.parse(row[1]), int(row[2]),
                                      parse_bool(row[3])))
        except (ValidationError, ValueError) as exc:
            raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    return out


# --------------------------------------------------------------------------
# JSON lines
# --------------------------------------------------------------------------

def dumps_jsonl(records: Iterable[Mapping]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> None:
    atomic_write_text(path, dumps_jsonl(records))


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc.msg}") from None
    return out
