"""Distribution-free normal range and last-point anomaly verdicts.

A point is anomalous when it falls outside ``T + S + mu_hat +/- k * sigma_hat``
with ``k = 1/sqrt(p_anom)``. By Chebyshev's inequality that band is exceeded
with probability at most ``p_anom`` for any finite-variance residual, which
is why no residual distribution is assumed. ``mu_hat`` and ``sigma_hat`` are
the median and scaled MAD of the residuals, estimated without the point
under test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .core import AnomalyVerdict, Decomposition, MetricSeries, SeriesTooShortError
from .decompose import Decomposer, _check_w, classical_decompose, min_length, mmd_decompose


@dataclass(frozen=True)
class DetectorConfig:
    p_anom: float = 0.01
    mad_scale_b: float = 1.4826
    min_sigma: float | None = None  # None: 1e-9 * max(1, |median(X)|)

    def __post_init__(self):
        chebyshev_k(self.p_anom)
        if not self.mad_scale_b > 0:
            raise ValueError("mad_scale_b must be positive")
        if self.min_sigma is not None and not self.min_sigma > 0:
            raise ValueError("min_sigma must be positive")

    @property
    def k(self) -> float:
        return chebyshev_k(self.p_anom)


def chebyshev_k(p_anom: float) -> float:
    if not 0.0 < p_anom < 1.0:
        raise ValueError(f"p_anom must lie in (0, 1), got {p_anom}")
    return 1.0 / math.sqrt(p_anom)


def default_sigma_floor(x) -> float:
    return 1e-9 * max(1.0, abs(float(_kernels.active.median(np.ascontiguousarray(x, dtype=np.float64)))))


def robust_stats(residual, cfg: DetectorConfig | None = None, floor: float | None = None) -> tuple[float, float]:
    """``(median, b * MAD)`` with ``sigma_hat`` floored at ``min_sigma``."""
    cfg = cfg or DetectorConfig()
    r = np.ascontiguousarray(residual, dtype=np.float64)
    if r.shape[0] < 3:
        raise SeriesTooShortError("robust_stats needs at least 3 residuals")
    if cfg.min_sigma is not None:
        floor = cfg.min_sigma
    elif floor is None:
        floor = 1e-9
    mu, sigma = _kernels.active.robust_stats(r, float(cfg.mad_scale_b), float(floor))
    return float(mu), float(sigma)


def normal_range(decomp: Decomposition, t: int, cfg: DetectorConfig | None = None,
                 stats: tuple[float, float] | None = None) -> tuple[float, float]:
    """Band ``T_t + S_t + mu_hat -/+ k * sigma_hat``.

    Without explicit ``stats`` the residual statistics are estimated with
    index ``t`` left out.
    """
    cfg = cfg or DetectorConfig()
    n = decomp.residual.shape[0]
    if not -n <= t < n:
        raise IndexError(t)
    t = t % n
    if stats is None:
        stats = robust_stats(np.delete(decomp.residual, t), cfg)
    mu, sigma = stats
    centre = float(decomp.trend[t] + decomp.seasonal[t]) + mu
    half = cfg.k * sigma
    return centre - half, centre + half


# single-call kernels computing decomposition + residual stats for the last point
_FUSED = {mmd_decompose: "probe_mmd", classical_decompose: "probe_classical"}


class PointTest(NamedTuple):
    value: float
    prediction: float  # T + S at the point
    residual: float
    mu_hat: float
    sigma_hat: float

    def band(self, k: float) -> tuple[float, float]:
        c = self.prediction + self.mu_hat
        return c - k * self.sigma_hat, c + k * self.sigma_hat

    def is_outside(self, k: float) -> bool:
        lo, hi = self.band(k)
        return self.value < lo or self.value > hi

    @property
    def severity(self) -> float:
        return abs(self.residual - self.mu_hat) / self.sigma_hat


def probe_last_point(x: np.ndarray, w: int, cfg: DetectorConfig,
                     decomposer: Decomposer = mmd_decompose) -> PointTest:
    """Decompose ``x`` and test its final point against stats of the rest."""
    floor = -1.0 if cfg.min_sigma is None else float(cfg.min_sigma)
    fused = _FUSED.get(decomposer)
    if fused is not None:
        if x.shape[0] < min_length(w):
            raise SeriesTooShortError(f"need at least {min_length(w)} points for w={w}, got {x.shape[0]}")
        pred, resid, mu, sigma = getattr(_kernels.active, fused)(x, int(w), float(cfg.mad_scale_b), floor)
        return PointTest(float(x[-1]), float(pred), float(resid), float(mu), float(sigma))
    d = decomposer(x, w)
    floor = cfg.min_sigma if cfg.min_sigma is not None else default_sigma_floor(x)
    mu, sigma = robust_stats(d.residual[:-1], cfg, floor)
    return PointTest(float(x[-1]), float(d.trend[-1] + d.seasonal[-1]),
                     float(d.residual[-1]), mu, sigma)


def _clean(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-d series")
    if np.isnan(x).any():
        raise ValueError("series contains missing values; run fill_missing first")
    return x


def scan_points(x, w: int, cfg: DetectorConfig, decomposer: Decomposer = mmd_decompose,
                start: int | None = None) -> list[PointTest | None]:
    """Replay every index ``t >= start`` as the last observation of ``x[:t+1]``.

    Entries with too little history are ``None``.
    """
    x = _clean(x)
    w = _check_w(w)
    need = min_length(w) + 1
    out: list[PointTest | None] = [None] * x.shape[0]
    for t in range(max(need - 1, start or 0), x.shape[0]):
        out[t] = probe_last_point(x[: t + 1], w, cfg, decomposer)
    return out


def detect_last(series: MetricSeries | np.ndarray, cfg: DetectorConfig | None = None,
                w: int | None = None, decomposer: Decomposer = mmd_decompose) -> AnomalyVerdict:
    """Verdict for the most recent observation of a gap-filled series."""
    cfg = cfg or DetectorConfig()
    if isinstance(series, MetricSeries):
        x = series.values
        w = w if w is not None else series.period_w
        ident = (series.metric_id, series.dimensions, str(series.timestamps[-1]))
    else:
        x = np.asarray(series, dtype=float)
        ident = ("", (), "")
    if w is None:
        raise ValueError("period w is required (pass w or set series.period_w)")
    x = _clean(x)
    w = _check_w(w)
    need = min_length(w) + 1
    if x.shape[0] < need:
        raise SeriesTooShortError(f"need at least {need} points for w={w}, got {x.shape[0]}")

    k = cfg.k
    last = probe_last_point(x, w, cfg, decomposer)
    lo, hi = last.band(k)
    is_anomaly = last.value < lo or last.value > hi
    severity = last.severity

    streak = 0
    if is_anomaly:
        streak = 1
        end = x.shape[0] - 1
        while end >= need and probe_last_point(x[:end], w, cfg, decomposer).is_outside(k):
            streak += 1
            end -= 1

    return AnomalyVerdict(
        metric_id=ident[0], dimensions=ident[1], date=ident[2],
        band_low=lo, band_high=hi, last_value=last.value,
        is_anomaly=bool(is_anomaly), severity=float(severity), exceed_streak=streak,
        mu_hat=last.mu_hat, sigma_hat=last.sigma_hat, period_w=int(w),
    )
