"""Label aggregation, detection scoring, grid search and throughput timing."""
from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import AnomalyVerdict, LabelRecord, MetricSeries, MMDError
from .decompose import get_decomposer
from .detect import DetectorConfig, PointTest, detect_last, scan_points
from .frequency import FrequencyConfig, estimate_period
from .rank import RankWeights
from .retrieve import AlertHistory, RetrievalConfig, run_retrieval
from .synthetic import EPISODE, SHIFT, Corpus


@dataclass(frozen=True)
class AggregatedLabel:
    metric_id: str
    timestamp: str
    agreement_ratio: float
    is_alert_majority: bool
    dimensions: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f_beta: float
    beta: float = 2.0

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int, beta: float = 2.0) -> "MetricsReport":
        if tp + fn == 0:
            raise MMDError("no positive labels: recall is undefined")
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn)
        return cls(tp, fp, fn, tn, precision, recall, f_beta(precision, recall, beta), beta)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall,
                f"f{self.beta:g}": self.f_beta}


def agreement_ratio(labels: Sequence[LabelRecord], viewers: int) -> float:
    if viewers < 1:
        raise ValueError("viewers must be >= 1")
    flagged = {r.labeler_id for r in labels if r.is_alert}
    if len(flagged) > viewers:
        raise ValueError("more flagging labelers than viewers")
    return len(flagged) / viewers


def aggregate_labels(labels: Iterable[LabelRecord]) -> dict[str, dict[str, AggregatedLabel]]:
    """Per series key, per ISO date: agreement ratio and majority verdict.

    Viewers of a series are the distinct labelers with any record on it.
    Dates nobody flagged are not listed; callers treat them as ratio 0.
    """
    viewers: dict[str, set[str]] = defaultdict(set)
    flags: dict[str, dict[str, list[LabelRecord]]] = defaultdict(lambda: defaultdict(list))
    ident: dict[str, LabelRecord] = {}
    for r in labels:
        key = r.key
        viewers[key].add(r.labeler_id)
        ident.setdefault(key, r)
        if r.date is not None:
            flags[key][r.date].append(r)
    out: dict[str, dict[str, AggregatedLabel]] = {}
    for key, seen in viewers.items():
        rec = ident[key]
        per_date = {}
        for date, recs in flags.get(key, {}).items():
            ratio = agreement_ratio(recs, len(seen))
            per_date[date] = AggregatedLabel(rec.metric_id, date, ratio, ratio > 0.5, rec.dimensions)
        out[key] = per_date
    return out


def f_beta(precision: float, recall: float, beta: float = 2.0) -> float:
    if precision == 0 and recall == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * precision * recall / (b2 * precision + recall)


# --------------------------------------------------------------------------
# point replay
# --------------------------------------------------------------------------

@dataclass
class SeriesScan:
    series: MetricSeries
    period_w: int
    points: list[PointTest | None]

    def outside(self, k: float) -> np.ndarray:
        return np.array([p is not None and p.is_outside(k) for p in self.points])

    def streaks(self, k: float) -> np.ndarray:
        out = self.outside(k)
        streak = np.zeros(out.shape[0], dtype=int)
        run = 0
        for t, flag in enumerate(out):
            run = run + 1 if flag else 0
            streak[t] = run
        return streak


def corpus_periods(corpus: Corpus, config: FrequencyConfig | None = None) -> dict[str, int]:
    """One period per series: the cached ``period_w`` or a fresh estimate."""
    return {s.key: s.period_w if s.period_w is not None else estimate_period(s, config).period_w
            for s in corpus.series}


def _scan_job(job):
    values, w, cfg, decomposer, start = job
    return scan_points(values, w, cfg, get_decomposer(decomposer), start)


def scan_corpus(corpus: Corpus, decomposer: str = "mmd", cfg: DetectorConfig | None = None,
                periods: Mapping[str, int] | None = None, workers: int = 1) -> list[SeriesScan]:
    """Replay each in-range point of each series as its last observation.

    ``workers > 1`` fans the series out over a process pool; results do not
    depend on the worker count.
    """
    cfg = cfg or DetectorConfig()
    get_decomposer(decomposer)  # fail fast on unknown names
    periods = periods if periods is not None else corpus_periods(corpus)
    jobs = []
    for s in corpus.series:
        in_range = np.flatnonzero([corpus.in_range(d) for d in s.timestamps])
        start = int(in_range[0]) if in_range.size else len(s)
        # earlier points are replayed too so trailing streaks are complete
        jobs.append((s.values, periods[s.key], cfg, decomposer, max(0, start - 31)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_scan_job(j) for j in jobs]
    return [SeriesScan(s, j[1], pts) for s, j, pts in zip(corpus.series, jobs, results)]


def _tally(scans: Sequence[SeriesScan], corpus: Corpus, aggregated, p_anom: float,
           persist_days: int, beta: float = 2.0) -> MetricsReport:
    k = 1.0 / np.sqrt(p_anom)
    tp = fp = fn = tn = 0
    for sc in scans:
        labels = aggregated.get(sc.series.key)
        if labels is None:
            continue  # nobody looked at this series
        streak = sc.streaks(k)
        for t, date in enumerate(sc.series.timestamps):
            if sc.points[t] is None:
                continue
            date = str(date)
            if not corpus.in_range(date):
                continue
            lab = labels.get(date)
            ratio = lab.agreement_ratio if lab is not None else 0.0
            if ratio == 0.5:
                continue  # ties are excluded
            truth = ratio > 0.5
            pred = streak[t] >= persist_days
            if truth and pred:
                tp += 1
            elif truth:
                fn += 1
            elif pred:
                fp += 1
            else:
                tn += 1
    return MetricsReport.from_counts(tp, fp, fn, tn, beta)


def score_detector(cfg: DetectorConfig, corpus: Corpus, decomposer: str = "mmd",
                   persist_days: int = 1, periods: Mapping[str, int] | None = None,
                   beta: float = 2.0, workers: int = 1) -> MetricsReport:
    """Confusion counts of the detector against majority crowd labels.

    A point counts as detected when it is out of range and has been for at
    least ``persist_days`` consecutive days.
    """
    scans = scan_corpus(corpus, decomposer, cfg, periods, workers)
    return _tally(scans, corpus, aggregate_labels(corpus.labels), cfg.p_anom, persist_days, beta)


@dataclass(frozen=True)
class GridResult:
    best_params: dict
    train_report: MetricsReport
    test_report: MetricsReport
    train_table: list[tuple[dict, MetricsReport]] = field(repr=False, default_factory=list)


def _select_best(train_table: Sequence[tuple[dict, MetricsReport]]) -> dict:
    # sees train results only
    best = min(train_table, key=lambda pr: (-pr[1].f_beta, pr[0]["p_anom"], pr[0]["persist_days"]))
    return best[0]


def grid_search(grid: Mapping[str, Sequence], train: Corpus, test: Corpus, decomposer: str = "mmd",
                base_cfg: DetectorConfig | None = None,
                periods: Mapping[str, int] | None = None, workers: int = 1) -> GridResult:
    """Exhaustive search over ``p_anom`` x ``persist_days`` maximizing train F2.

    Ties go to the smallest ``p_anom``, then the smallest ``persist_days``.
    Only the chosen point is evaluated on ``test``.
    """
    unknown = set(grid) - {"p_anom", "persist_days"}
    if unknown:
        raise ValueError(f"unsupported grid keys: {sorted(unknown)}")
    p_values = list(grid.get("p_anom", [0.01]))
    persist_values = list(grid.get("persist_days", [1]))
    if not p_values or not persist_values:
        raise ValueError("empty grid")
    _check_disjoint(train, test)
    base_cfg = base_cfg or DetectorConfig()

    periods = periods if periods is not None else corpus_periods(train)
    train_scans = scan_corpus(train, decomposer, base_cfg, periods, workers)
    train_agg = aggregate_labels(train.labels)
    table = []
    for p, persist in itertools.product(sorted(p_values), sorted(persist_values)):
        params = {"p_anom": float(p), "persist_days": int(persist)}
        table.append((params, _tally(train_scans, train, train_agg, p, persist)))
    best = _select_best(table)
    train_report = dict((tuple(sorted(pr.items())), r) for pr, r in table)[tuple(sorted(best.items()))]

    if test.series is train.series:
        test_scans = scan_corpus(test, decomposer, base_cfg, periods, workers)
    else:
        test_scans = scan_corpus(test, decomposer, base_cfg, corpus_periods(test), workers)
    test_report = _tally(test_scans, test, aggregate_labels(test.labels),
                         best["p_anom"], best["persist_days"])
    return GridResult(best, train_report, test_report, table)


def _check_disjoint(train: Corpus, test: Corpus) -> None:
    if train.series is not test.series:
        return  # different corpora are disjoint by construction
    lo_a, hi_a = train.eval_start, train.eval_end
    lo_b, hi_b = test.eval_start, test.eval_end
    if hi_a is not None and lo_b is not None and np.datetime64(hi_a) <= np.datetime64(lo_b):
        return
    if hi_b is not None and lo_a is not None and np.datetime64(hi_b) <= np.datetime64(lo_a):
        return
    raise ValueError("train and test date ranges overlap")


# --------------------------------------------------------------------------
# throughput
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchReport:
    decomposer: str
    time_ms_per_100: float
    std_ms: float
    repeats: int
    n_series: int

    def to_dict(self) -> dict:
        return {"decomposer": self.decomposer, "time_ms_per_100": self.time_ms_per_100,
                "std_ms": self.std_ms, "repeats": self.repeats, "n_series": self.n_series}


def bench_throughput(decomposer: str, series: Sequence[MetricSeries], batch: int = 100,
                     repeats: int = 5, cfg: DetectorConfig | None = None,
                     periods: Mapping[str, int] | None = None) -> BenchReport:
    """Mean wall-clock of ``detect_last`` per ``batch`` series, single-threaded.

    Periods are resolved before timing (they are a one-time estimate). One
    untimed warm-up pass precedes the ``repeats`` timed passes.
    """
    if not series:
        raise MMDError("empty corpus")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    cfg = cfg or DetectorConfig()
    dec = get_decomposer(decomposer)
    if periods is None:
        periods = {s.key: s.period_w or estimate_period(s).period_w for s in series}
    jobs = [(s, periods[s.key]) for s in series]

    def run():
        for s, w in jobs:
            detect_last(s, cfg, w, dec)

    run()
    per_batch = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        per_batch.append((time.perf_counter() - t0) * 1e3 * batch / len(jobs))
    return BenchReport(decomposer, float(np.mean(per_batch)), float(np.std(per_batch)),
                       repeats, len(jobs))


# --------------------------------------------------------------------------
# day-by-day replay of both phases
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplayReport:
    phase_one_alerts: int
    phase_one_valid: int
    two_phase_alerts: int
    two_phase_valid: int

    @property
    def phase_one_precision(self) -> float:
        return self.phase_one_valid / self.phase_one_alerts if self.phase_one_alerts else 0.0

    @property
    def two_phase_precision(self) -> float:
        return self.two_phase_valid / self.two_phase_alerts if self.two_phase_alerts else 0.0

    def to_dict(self) -> dict:
        return {"phase_one_alerts": self.phase_one_alerts, "phase_one_valid": self.phase_one_valid,
                "phase_one_precision": self.phase_one_precision,
                "two_phase_alerts": self.two_phase_alerts, "two_phase_valid": self.two_phase_valid,
                "two_phase_precision": self.two_phase_precision}


def verdict_at(scan: SeriesScan, t: int, k: float) -> AnomalyVerdict:
    """Verdict for index ``t`` rebuilt from a scan; equals ``detect_last`` on the prefix."""
    pt = scan.points[t]
    if pt is None:
        raise MMDError(f"index {t} has too little history for w={scan.period_w}")
    lo, hi = pt.band(k)
    outside = pt.is_outside(k)
    streak = 0
    if outside:
        j = t
        while j >= 0 and scan.points[j] is not None and scan.points[j].is_outside(k):
            streak += 1
            j -= 1
    s = scan.series
    return AnomalyVerdict(s.metric_id, s.dimensions, str(s.timestamps[t]), lo, hi, pt.value,
                          outside, pt.severity, streak, pt.mu_hat, pt.sigma_hat, scan.period_w)


def replay_alerting(corpus: Corpus, detector: DetectorConfig, retrieval: RetrievalConfig,
                    weights: RankWeights | None = None, decomposer: str = "mmd",
                    periods: Mapping[str, int] | None = None) -> ReplayReport:
    """Run phase one alone and phase one + retrieval day by day.

    Ground truth comes from ``corpus.truth``: alerts on persistent anomalies
    (level shifts and episodes) are valid, everything else is not.
    """
    weights = weights or RankWeights()
    scans = scan_corpus(corpus, decomposer, detector, periods)
    k = detector.k
    all_dates = sorted({str(d) for s in corpus.series for d in s.timestamps if corpus.in_range(d)})
    index = {s.key: {str(d): i for i, d in enumerate(s.timestamps)} for s in corpus.series}
    history = AlertHistory()
    p1 = p1_valid = p2 = p2_valid = 0

    def valid(key: str, t: int) -> bool:
        return int(corpus.truth[key][t]) in (SHIFT, EPISODE)

    for date in all_dates:
        verdicts, prefixes, where = [], {}, {}
        for sc in scans:
            t = index[sc.series.key].get(date)
            if t is None or sc.points[t] is None:
                continue
            v = verdict_at(sc, t, k)
            if not v.is_anomaly:
                continue
            key = sc.series.key
            verdicts.append(v)
            prefixes[key] = sc.series.values[: t + 1]
            where[key] = t
            p1 += 1
            p1_valid += valid(key, t)
        if not verdicts:
            continue
        result = run_retrieval(verdicts, weights, history, retrieval, prefixes,
                               {sc.series.key: sc.series.priority for sc in scans})
        history = result.history
        for a in result.alerts:
            key = a.verdict.key
            p2 += 1
            p2_valid += valid(key, where[key])
    return ReplayReport(p1, p1_valid, p2, p2_valid)
