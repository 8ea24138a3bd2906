"""Second phase: turn the day's anomalies into a short, diverse alert list.

Order of operations in :func:`run_retrieval`:

1. persistence rule (alert only after ``persist_days_k`` out-of-range days)
2. dedupe rule (no repeat of a similar alert on the same series within
   ``dedupe_days_k`` days)
3. scoring with the linear ranking model
4. per-metric diversity selection (at most ``per_metric_cap`` alerts whose
   trailing windows are not strongly correlated)
5. global cap across metrics

Both caps are daily quotas: alerts already sent on the same date, as
recorded in the history, use them up.

Everything here is a pure transform of ``(history, inputs)``; persisting the
history is the caller's job.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (AnomalyVerdict, MetricSeries, Priority, UndefinedCorrelationError,
                   canonical_dimensions, pearson_corr, series_key)
from .rank import RankedAlert, RankWeights, extract_features, score


@dataclass(frozen=True)
class RetrievalConfig:
    corr_threshold: float = 0.9
    per_metric_cap: int = 2
    global_cap: int = 10
    dedupe_days_k: int = 7
    persist_days_k: int = 1
    corr_window: int = 60

    def __post_init__(self):
        if not 0 < self.corr_threshold <= 1:
            raise ValueError("corr_threshold must lie in (0, 1]")
        if self.per_metric_cap < 1 or self.global_cap < 1:
            raise ValueError("caps must be >= 1")
        if self.dedupe_days_k < 0:
            raise ValueError("dedupe_days_k must be >= 0")
        if self.persist_days_k < 1:
            raise ValueError("persist_days_k must be >= 1")
        if self.corr_window < 3:
            raise ValueError("corr_window must be >= 3")


@dataclass(frozen=True)
class HistoryEntry:
    metric_id: str
    dimensions: tuple[tuple[str, str], ...]
    date: str
    window: tuple[float, ...]


@dataclass(frozen=True)
class AlertHistory:
    """Previously sent alerts per series identity."""

    entries: Mapping[str, tuple[HistoryEntry, ...]] = field(default_factory=dict)

    def for_key(self, key: str) -> tuple[HistoryEntry, ...]:
        return self.entries.get(key, ())

    def on_date(self, date: str) -> list[HistoryEntry]:
        return [e for key in sorted(self.entries) for e in self.entries[key] if e.date == date]

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def appended(self, items: Iterable[HistoryEntry]) -> "AlertHistory":
        """New history with ``items`` added (same series and date replaces)."""
        new = {k: list(v) for k, v in self.entries.items()}
        for item in items:
            key = series_key(item.metric_id, item.dimensions)
            kept = [e for e in new.get(key, []) if e.date != item.date]
            kept.append(item)
            new[key] = sorted(kept, key=lambda e: e.date)
        return AlertHistory({k: tuple(v) for k, v in new.items()})

    def to_jsonl(self) -> str:
        lines = []
        for key in sorted(self.entries):
            for e in self.entries[key]:
                lines.append(json.dumps({"metric_id": e.metric_id, "dimensions": dict(e.dimensions),
                                         "date": e.date, "window": list(e.window)}, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "AlertHistory":
        items = []
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            items.append(HistoryEntry(str(rec["metric_id"]), canonical_dimensions(rec.get("dimensions")),
                                      str(rec["date"]), tuple(float(x) for x in rec["window"])))
        return cls().appended(items)


@dataclass(frozen=True)
class Candidate:
    ranked: RankedAlert
    window: np.ndarray = field(repr=False)
    priority: Priority = Priority.P4

    @property
    def key(self) -> str:
        return self.ranked.verdict.key

    @property
    def metric_id(self) -> str:
        return self.ranked.verdict.metric_id

    @property
    def score(self) -> float:
        return self.ranked.score

    def sort_key(self):
        return (-self.ranked.score, -self.ranked.verdict.severity, self.key)


@dataclass(frozen=True)
class Alert:
    candidate: Candidate
    rule_trace: Mapping[str, str]

    @property
    def verdict(self) -> AnomalyVerdict:
        return self.candidate.ranked.verdict

    @property
    def score(self) -> float:
        return self.candidate.score

    def to_dict(self) -> dict:
        v = self.verdict
        f = self.candidate.ranked.features
        return {
            "metric_id": v.metric_id,
            "dimensions": dict(v.dimensions),
            "date": v.date,
            "band_low": v.band_low,
            "band_high": v.band_high,
            "value": v.last_value,
            "severity": v.severity,
            "exceed_streak": v.exceed_streak,
            "priority": self.candidate.priority.name,
            "f_g": f.f_g,
            "score": self.score,
            "rule_trace": dict(self.rule_trace),
        }


@dataclass(frozen=True)
class RetrievalResult:
    alerts: list[Alert]
    suppressed: list[tuple[str, str]]  # (series key, rule that dropped it)
    history: AlertHistory


def trailing_window(series: MetricSeries | np.ndarray, length: int) -> np.ndarray:
    x = series.values if isinstance(series, MetricSeries) else np.asarray(series, dtype=float)
    return np.array(x[-length:], dtype=float)


def _abs_corr(a, b) -> float | None:
    """|corr| over the common trailing span; ``None`` when undefined."""
    m = min(len(a), len(b))
    if m < 3:
        return None
    try:
        return abs(pearson_corr(np.asarray(a)[-m:], np.asarray(b)[-m:]))
    except UndefinedCorrelationError:
        return None


def _similar(a, b, threshold: float) -> bool:
    c = _abs_corr(a, b)
    return c is None or c >= threshold


def _days_between(later: str, earlier: str) -> int:
    return int((np.datetime64(later, "D") - np.datetime64(earlier, "D")).astype(int))


def apply_persistence_rule(verdict: AnomalyVerdict, cfg: RetrievalConfig) -> bool:
    return verdict.exceed_streak >= cfg.persist_days_k


def apply_dedupe_rule(key: str, date: str, window, history: AlertHistory, cfg: RetrievalConfig) -> bool:
    """True to keep the candidate.

    A candidate is dropped when the same series already alerted today, or
    alerted within the last ``dedupe_days_k`` days with a trailing window
    correlated at ``|r| >= corr_threshold``. Undefined correlation counts
    as similar.
    """
    for entry in history.for_key(key):
        gap = _days_between(date, entry.date)
        if gap == 0:
            return False
        if 0 < gap <= cfg.dedupe_days_k and _similar(window, entry.window, cfg.corr_threshold):
            return False
    return True


def select_per_metric(anomalies: Sequence[Candidate], cfg: RetrievalConfig,
                      already_sent: Sequence[Sequence[float]] = ()) -> list[Candidate]:
    """Greedy diversity pick within one metric.

    Walks candidates by descending score and admits one only if its window
    is weakly correlated (``|r| < corr_threshold``) with every candidate
    already admitted, including ``already_sent`` windows of alerts this
    metric produced earlier the same day, which also use up the cap.
    """
    chosen: list[Candidate] = []
    windows = list(already_sent)
    for cand in sorted(anomalies, key=Candidate.sort_key):
        if len(windows) >= cfg.per_metric_cap:
            break
        if all(not _similar(cand.window, w, cfg.corr_threshold) for w in windows):
            chosen.append(cand)
            windows.append(cand.window)
    return chosen


def select_global(per_metric_lists: Iterable[Sequence[Candidate]], cfg: RetrievalConfig,
                  already_sent: int = 0) -> list[Candidate]:
    merged = [c for group in per_metric_lists for c in group]
    merged.sort(key=Candidate.sort_key)
    return merged[: max(0, cfg.global_cap - already_sent)]


def run_retrieval(verdicts: Sequence[AnomalyVerdict], weights: RankWeights, history: AlertHistory,
                  cfg: RetrievalConfig, series: Mapping[str, MetricSeries | np.ndarray],
                  priorities: Mapping[str, Priority] | None = None) -> RetrievalResult:
    """Run both business rules, ranking, diversity and capping.

    ``series`` maps series keys to the data the trailing correlation windows
    are cut from; ``priorities`` defaults to the series' own priority.
    Verdicts are grouped by date and each day is processed in order. The
    caps are per day: alerts already recorded in ``history`` for that date
    count against them, so rerunning a day never exceeds its quota.
    """
    by_date: dict[str, list[AnomalyVerdict]] = defaultdict(list)
    for v in verdicts:
        by_date[v.date].append(v)
    alerts: list[Alert] = []
    suppressed: list[tuple[str, str]] = []
    for date in sorted(by_date):
        day_alerts, day_suppressed, history = _retrieve_day(by_date[date], date, weights, history, cfg,
                                                           series, priorities)
        alerts.extend(day_alerts)
        suppressed.extend(day_suppressed)
    return RetrievalResult(alerts, suppressed, history)


def _retrieve_day(verdicts, date, weights, history, cfg, series, priorities):
    suppressed: list[tuple[str, str]] = []
    by_metric: dict[str, list[Candidate]] = defaultdict(list)
    for v in verdicts:
        if not v.is_anomaly:
            continue
        key = v.key
        if not apply_persistence_rule(v, cfg):
            suppressed.append((key, "persistence"))
            continue
        src = series[key]
        window = trailing_window(src, cfg.corr_window)
        if not apply_dedupe_rule(key, v.date, window, history, cfg):
            suppressed.append((key, "dedupe"))
            continue
        if priorities is not None and key in priorities:
            prio = Priority.parse(priorities[key])
        elif isinstance(src, MetricSeries):
            prio = src.priority
        else:
            prio = Priority.P4
        feats = extract_features(v, prio, v.dimensions)
        ranked = RankedAlert(v, feats, score(feats, weights))
        by_metric[v.metric_id].append(Candidate(ranked, window, prio))

    sent_today = history.on_date(date)
    sent_windows: dict[str, list[tuple[float, ...]]] = defaultdict(list)
    for e in sent_today:
        sent_windows[e.metric_id].append(e.window)

    per_metric = []
    for metric_id in sorted(by_metric):
        group = by_metric[metric_id]
        picked = select_per_metric(group, cfg, sent_windows.get(metric_id, ()))
        picked_keys = {c.key for c in picked}
        suppressed.extend((c.key, "diversity") for c in group if c.key not in picked_keys)
        per_metric.append(picked)

    final = select_global(per_metric, cfg, len(sent_today))
    final_keys = {c.key for c in final}
    suppressed.extend((c.key, "global_cap") for g in per_metric for c in g if c.key not in final_keys)

    alerts = []
    for rank_pos, c in enumerate(final, len(sent_today) + 1):
        trace = {
            "persistence": f"pass (streak {c.ranked.verdict.exceed_streak} >= {cfg.persist_days_k})",
            "dedupe": f"pass (no similar alert in {cfg.dedupe_days_k} days)",
            "diversity": f"pass (|r| < {cfg.corr_threshold} vs selected)",
            "global_cap": f"pass (rank {rank_pos} of <= {cfg.global_cap} today)",
        }
        alerts.append(Alert(c, trace))
    if final:
        history = history.appended(
            HistoryEntry(c.metric_id, c.ranked.verdict.dimensions, c.ranked.verdict.date,
                         tuple(float(x) for x in c.window))
            for c in final
        )
    return alerts, suppressed, history
