"""Reproducible synthetic metric corpus with injected, labeled anomalies.

Series are ``level + slope*t + seasonal + noise``. Three anomaly kinds are
injected at non-overlapping positions:

* ``SPIKE``   one-day blip
* ``SHIFT``   permanent level change (first ``shift_label_days`` days labeled)
* ``EPISODE`` temporary level change lasting ``episode_days`` days

Crowd labels are simulated by assigning each series to ``n_labelers``
people from a pool; each flags the true anomalous days (missing some with
probability ``label_noise``) and adds occasional false flags.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import LabelRecord, MetricSeries, Priority, canonical_dimensions
from .rank import FeedbackRecord, Features, RankWeights, one_hot, score

NONE, SPIKE, SHIFT, EPISODE = 0, 1, 2, 3

_NOISES = ("gaussian", "student_t", "exponential")
_DIM_VALUES = {"country": ("US", "UK", "DE", "FR"), "device": ("PC", "mobile", "tablet")}


@dataclass(frozen=True)
class CorpusSpec:
    n_series: int = 164
    length: int = 212  # Jan 1 .. Jul 31
    start: str = "2018-01-01"
    period: int | tuple[int, ...] = 7
    level: float = 100.0
    trend_slope: float = 0.05  # per-day slope drawn from U(-s, s)
    seasonal_amplitude: float = 8.0
    noise: str = "gaussian"
    noise_scale: float = 1.0
    anomaly_rate: float = 0.02
    anomaly_magnitude: float = 8.0  # in noise_scale units
    shift_fraction: float = 0.2
    episode_fraction: float = 0.0
    episode_days: int = 5
    shift_label_days: int = 3
    n_metrics: int | None = None  # None: one metric per series
    n_labelers: int = 3
    labeler_pool: int = 38
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise not in _NOISES:
            raise ValueError(f"noise must be one of {_NOISES}")
        if self.n_series < 0 or self.length < 8:
            raise ValueError("need n_series >= 0 and length >= 8")
        if not 0 <= self.anomaly_rate < 1:
            raise ValueError("anomaly_rate must lie in [0, 1)")
        if self.shift_fraction + self.episode_fraction > 1:
            raise ValueError("shift_fraction + episode_fraction must be <= 1")
        if self.n_labelers > self.labeler_pool:
            raise ValueError("n_labelers cannot exceed labeler_pool")


@dataclass(frozen=True)
class Corpus:
    series: tuple[MetricSeries, ...]
    labels: tuple[LabelRecord, ...]
    truth: dict[str, np.ndarray] = field(default_factory=dict)
    eval_start: str | None = None
    eval_end: str | None = None  # exclusive

    def restrict(self, start: str | None, end: str | None) -> "Corpus":
        """Same data, evaluation limited to dates in ``[start, end)``."""
        return replace(self, eval_start=start, eval_end=end)

    def split(self, date: str) -> tuple["Corpus", "Corpus"]:
        return self.restrict(self.eval_start, date), self.restrict(date, self.eval_end)

    def in_range(self, date) -> bool:
        d = np.datetime64(date, "D")
        if self.eval_start is not None and d < np.datetime64(self.eval_start, "D"):
            return False
        if self.eval_end is not None and d >= np.datetime64(self.eval_end, "D"):
            return False
        return True


def _noise(rng, kind: str, n: int, scale: float) -> np.ndarray:
    if kind == "gaussian":
        e = rng.standard_normal(n)
    elif kind == "student_t":
        e = rng.standard_t(3, n) / np.sqrt(3.0)  # unit variance
    else:
        e = rng.exponential(1.0, n) - 1.0
    return scale * e


def _seasonal(rng, period: int, n: int, amplitude: float) -> np.ndarray:
    t = np.arange(n)
    phase1, phase2 = rng.uniform(0, 2 * np.pi, 2)
    pattern = np.sin(2 * np.pi * t / period + phase1)
    if period >= 4:
        pattern = pattern + 0.3 * np.sin(4 * np.pi * t / period + phase2)
    return amplitude * pattern


def _identity(rng, i: int, spec: CorpusSpec):
    if spec.n_metrics is None:
        metric_id = f"metric_{i:03d}"
        dims = {}
        for name, values in _DIM_VALUES.items():
            if rng.random() < 0.5:
                dims[name] = str(values[rng.integers(len(values))])
    else:
        metric_id = f"metric_{i % spec.n_metrics:03d}"
        dims = {"segment": f"s{i // spec.n_metrics:03d}"}
        if rng.random() < 0.5:
            dims["device"] = str(_DIM_VALUES["device"][rng.integers(3)])
    return metric_id, dims


def _inject(rng, x: np.ndarray, truth: np.ndarray, period: int, spec: CorpusSpec) -> None:
    n = x.shape[0]
    warmup = 3 * period + 1
    span = n - warmup
    if span <= 0 or spec.anomaly_rate == 0:
        return
    count = int(rng.binomial(span, spec.anomaly_rate))
    if count == 0:
        return
    gap = max(period, spec.episode_days) + 2
    taken = np.zeros(n, dtype=bool)
    for pos in np.sort(rng.choice(np.arange(warmup, n), size=min(count, span), replace=False)):
        lo, hi = max(0, pos - gap), min(n, pos + gap)
        if taken[lo:hi].any():
            continue
        taken[pos] = True
        size = spec.anomaly_magnitude * spec.noise_scale * rng.uniform(1.0, 1.5) * rng.choice([-1.0, 1.0])
        u = rng.random()
        if u < spec.shift_fraction:
            x[pos:] += size
            truth[pos: pos + spec.shift_label_days] = SHIFT
        elif u < spec.shift_fraction + spec.episode_fraction:
            x[pos: pos + spec.episode_days] += size
            truth[pos: pos + spec.episode_days] = EPISODE
        else:
            x[pos] += size
            truth[pos] = SPIKE


def gen_corpus(spec: CorpusSpec | None = None) -> Corpus:
    spec = spec or CorpusSpec()
    rng = np.random.default_rng(spec.seed)
    dates = np.arange(spec.length) + np.datetime64(spec.start, "D")
    periods = (spec.period,) if isinstance(spec.period, int) else tuple(spec.period)
    pool = [f"labeler_{j:02d}" for j in range(spec.labeler_pool)]

    series, labels, truth = [], [], {}
    for i in range(spec.n_series):
        period = int(periods[rng.integers(len(periods))])
        metric_id, dims = _identity(rng, i, spec)
        t = np.arange(spec.length, dtype=float)
        x = (spec.level + rng.uniform(-spec.trend_slope, spec.trend_slope) * t
             + _seasonal(rng, period, spec.length, spec.seasonal_amplitude)
             + _noise(rng, spec.noise, spec.length, spec.noise_scale))
        tr = np.zeros(spec.length, dtype=np.int8)
        _inject(rng, x, tr, period, spec)
        s = MetricSeries(metric_id, dates, x, dims, Priority(int(rng.integers(4))))
        series.append(s)
        truth[s.key] = tr

        dims_t = canonical_dimensions(dims)
        positives = np.flatnonzero(tr)
        for who in rng.choice(len(pool), size=spec.n_labelers, replace=False):
            labeler = pool[who]
            labels.append(LabelRecord(metric_id, None, labeler, False, dims_t))
            keep = rng.random(positives.size) >= spec.label_noise
            flagged = set(positives[keep].tolist())
            if spec.label_noise > 0:
                n_false = int(rng.poisson(2 * spec.label_noise))
                flagged.update(rng.integers(0, spec.length, n_false).tolist())
            for pos in sorted(flagged):
                labels.append(LabelRecord(metric_id, str(dates[pos]), labeler, True, dims_t))
    return Corpus(tuple(series), tuple(labels), truth)


def gen_feedback(weights: RankWeights, n: int = 500, intercept: float = -4.0,
                 max_severity: float = 10.0, seed: int = 0) -> list[FeedbackRecord]:
    """Valid/invalid feedback drawn from a logistic model with known weights.

    Severity is uniform on ``[0, max_severity]``, priority uniform over
    P1..P4 and granularity uniform on 0..3. A record is valid with
    probability ``sigmoid(score + intercept)``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        f_d = float(rng.uniform(0, max_severity))
        prio = Priority(int(rng.integers(4)))
        f_g = int(rng.integers(4))
        z = score(Features(f_d, one_hot(prio), f_g), weights) + intercept
        out.append(FeedbackRecord(f_d, prio, f_g, bool(rng.random() < 1.0 / (1.0 + np.exp(-z)))))
    return out
