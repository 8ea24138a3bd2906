"""Robust decomposition based metric alerting.

Phase one decomposes each daily series into trend, seasonality and residual
with median statistics and flags the latest point when it leaves a
Chebyshev band. Phase two ranks the day's anomalies, removes duplicates and
near-copies, and caps the list handed to people.
"""
from ._kernels import BACKEND
from .core import (AnomalyVerdict, Decomposition, LabelRecord, MetricSeries, MMDError, Observation,
                   Priority, SeriesTooShortError, UndefinedCorrelationError, ValidationError,
                   fill_missing, pearson_corr, series_key, validate_series)
from .decompose import classical_decompose, mmd_decompose, rolling_median_right, seasonal_median, symmetric_ma
from .detect import DetectorConfig, chebyshev_k, detect_last, normal_range, robust_stats
from .frequency import (FrequencyConfig, PeriodCache, PeriodEstimate, PeriodMethod, esprit_frequencies,
                        estimate_period, periodogram_period)
from .rank import FeedbackRecord, RankedAlert, RankWeights, extract_features, fit_weights, score
from .retrieve import AlertHistory, RetrievalConfig, run_retrieval, select_global, select_per_metric

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AnomalyVerdict", "Decomposition", "LabelRecord", "MetricSeries", "MMDError",
    "Observation", "Priority", "SeriesTooShortError", "UndefinedCorrelationError", "ValidationError",
    "fill_missing", "pearson_corr", "series_key", "validate_series",
    "classical_decompose", "mmd_decompose", "rolling_median_right", "seasonal_median", "symmetric_ma",
    "DetectorConfig", "chebyshev_k", "detect_last", "normal_range", "robust_stats",
    "FrequencyConfig", "PeriodCache", "PeriodEstimate", "PeriodMethod", "esprit_frequencies",
    "estimate_period", "periodogram_period",
    "FeedbackRecord", "RankedAlert", "RankWeights", "extract_features", "fit_weights", "score",
    "AlertHistory", "RetrievalConfig", "run_retrieval", "select_global", "select_per_metric",
]
