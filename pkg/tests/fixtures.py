"""Constructed retrieval fixtures shared by unit and acceptance tests."""
import numpy as np

from mmdalert.core import AnomalyVerdict, MetricSeries, Priority, canonical_dimensions

DATE = "2024-03-31"


def make_series(metric_id, dims, values, priority=Priority.P3):
    dates = np.arange(len(values)) + (np.datetime64(DATE) - len(values) + 1)
    return MetricSeries(metric_id, dates, values, dims, priority)


def make_verdict(s: MetricSeries, severity: float, streak: int = 1, anomaly: bool = True) -> AnomalyVerdict:
    return AnomalyVerdict(s.metric_id, s.dimensions, str(s.timestamps[-1]), 0.0, 1.0, float(s.values[-1]),
                          anomaly, float(severity), streak if anomaly else 0, 0.0, 1.0, 7)


def thirty_anomaly_fixture(seed: int = 0, length: int = 90):
    """30 anomalous series spread over 12 metrics.

    Within a metric some series are affine copies of the first one
    (|corr| = 1) and the rest are independent random walks. Streaks cycle
    through 1..4 so the persistence rule has something to cut.
    """
    rng = np.random.default_rng(seed)
    per_metric = [3, 3, 3, 3, 3, 3, 2, 2, 2, 2, 2, 2]
    series, verdicts = {}, []
    i = 0
    for m, count in enumerate(per_metric):
        base = np.cumsum(rng.standard_normal(length)) + 100
        for j in range(count):
            if j == 1:
                values = 3.0 * base - 20.0  # near-duplicate of the first slice
            else:
                values = np.cumsum(rng.standard_normal(length)) + 100
                if j == 0:
                    values = base
            dims = {"country": ["US", "UK", "DE"][j], "device": "PC"} if j else {"country": "US"}
            s = make_series(f"metric_{m:02d}", dims, values, Priority(int(rng.integers(4))))
            series[s.key] = s
            verdicts.append(make_verdict(s, rng.uniform(3, 30), streak=1 + i % 4))
            i += 1
    assert len(verdicts) == 30
    return verdicts, series


def dims(**kw):
    return canonical_dimensions(kw)
