"""Seasonal period estimation: ESPRIT with a periodogram fallback."""
from __future__ import annotations

import enum
import json
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import MetricSeries, MMDError, SeriesTooShortError


class EspritError(MMDError):
    """The rotational-invariance solve was rank deficient."""


class PeriodMethod(str, enum.Enum):
    ESPRIT = "ESPRIT"
    PERIODOGRAM = "Periodogram"
    DEFAULT = "Default"


@dataclass(frozen=True)
class PeriodEstimate:
    period_w: int
    method: PeriodMethod
    dominant_freq: float
    confidence: float


@dataclass(frozen=True)
class FrequencyConfig:
    max_order: int = 10
    energy_threshold: float = 0.9
    min_confidence: float = 0.2
    default_period: int = 7


def detrend(x) -> np.ndarray:
    """Remove the ordinary least-squares line (and thus the mean)."""
    x = np.asarray(x, dtype=float)
    t = np.arange(x.shape[0], dtype=float)
    A = np.column_stack([np.ones_like(t), t - t.mean()])
    coef, *_ = np.linalg.lstsq(A, x, rcond=None)
    return x - A @ coef


def _is_flat(x: np.ndarray, ref: np.ndarray) -> bool:
    scale = max(1.0, float(np.abs(ref).max()))
    return float(np.abs(x).max()) <= 1e-9 * scale


def _sinusoid_basis(freqs, n):
    t = np.arange(n, dtype=float)
    cols = []
    owners = []
    for i, f in enumerate(freqs):
        cols.append(np.cos(f * t))
        owners.append(i)
        if not np.isclose(f, np.pi):
            cols.append(np.sin(f * t))
            owners.append(i)
    return np.column_stack(cols), np.asarray(owners)


def _fit_sinusoids(x, freqs):
    """Least-squares amplitudes and explained-energy fractions per frequency."""
    n = x.shape[0]
    B, owners = _sinusoid_basis(freqs, n)
    coef, *_ = np.linalg.lstsq(B, x, rcond=None)
    total = float(np.dot(x, x))
    amps = np.empty(len(freqs))
    conf = np.empty(len(freqs))
    for i in range(len(freqs)):
        sel = owners == i
        amps[i] = float(np.sqrt(np.sum(coef[sel] ** 2)))
        comp = B[:, sel] @ coef[sel]
        conf[i] = min(1.0, float(np.dot(comp, comp)) / total) if total > 0 else 0.0
    return amps, conf


def _esprit(x, max_order: int, energy_threshold: float):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if max_order < 2:
        raise ValueError("max_order must be >= 2")
    if n < 3 * max_order:
        raise SeriesTooShortError(f"need at least {3 * max_order} points for max_order={max_order}, got {n}")
    xc = detrend(x)
    if _is_flat(xc, x):
        return np.empty(0), np.empty(0), np.empty(0)

    height = n // 3
    hankel = sliding_window_view(xc, height).T  # height x (n - height + 1)
    U, s, _ = np.linalg.svd(hankel, full_matrices=False)
    energy = s ** 2
    cum = np.cumsum(energy) / energy.sum()
    # two guard modes absorb what is left of the removed trend line
    order = int(np.searchsorted(cum, energy_threshold) + 1) + 2
    order = min(order, max_order, height - 1)
    sub = U[:, :order]
    rot, _, rank, _ = np.linalg.lstsq(sub[:-1], sub[1:], rcond=None)
    if rank < order:
        raise EspritError(f"rank {rank} < model order {order}")
    angles = np.abs(np.angle(np.linalg.eigvals(rot)))

    freqs: list[float] = []
    lowest = 2 * np.pi / n  # below one cycle per series: trend, not seasonality
    for f in sorted(angles):
        if f < lowest:
            continue
        if freqs and abs(f - freqs[-1]) <= 1e-6:
            continue  # conjugate partner or duplicate root
        freqs.append(float(f))
    if not freqs:
        return np.empty(0), np.empty(0), np.empty(0)
    freqs = np.asarray(freqs)
    amps, conf = _fit_sinusoids(xc, freqs)
    order_idx = np.argsort(-amps, kind="stable")
    return freqs[order_idx], amps[order_idx], conf[order_idx]


def esprit_frequencies(x, max_order: int = 10, energy_threshold: float = 0.9) -> list[tuple[float, float]]:
    """Sinusoidal frequencies (rad/sample) and amplitudes, strongest first.

    The series is detrended, embedded in a Hankel matrix of height
    ``len(x) // 3``, and the signal subspace (the smallest number of singular
    vectors holding ``energy_threshold`` of the energy, plus two guard
    vectors, at most ``max_order``) is solved for its shift-invariance
    operator by least squares. Eigenvalue arguments of that operator are the
    frequencies; roots slower than one cycle per series are dropped as trend.
    """
    freqs, amps, _ = _esprit(x, max_order, energy_threshold)
    return list(zip(freqs.tolist(), amps.tolist()))


def periodogram_period(x, default_period: int = 7) -> PeriodEstimate:
    """Period of the largest non-DC periodogram bin.

    The period is rounded and clamped to ``[2, len // 2]``; when clamping
    applies, ``dominant_freq`` is reported for the clamped period.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 8:
        raise SeriesTooShortError(f"need at least 8 points, got {n}")
    xc = detrend(x)
    if _is_flat(xc, x):
        return PeriodEstimate(default_period, PeriodMethod.DEFAULT, 2 * np.pi / default_period, 0.0)
    power = np.abs(np.fft.rfft(xc)) ** 2
    power[0] = 0.0
    k = int(np.argmax(power))
    total = float(power.sum())
    confidence = float(power[k] / total) if total > 0 else 0.0
    period = int(np.clip(round(n / k), 2, n // 2))
    freq = 2 * np.pi * k / n
    if round(2 * np.pi / freq) != period:
        freq = 2 * np.pi / period
    return PeriodEstimate(period, PeriodMethod.PERIODOGRAM, freq, confidence)


def estimate_period(series, config: FrequencyConfig | None = None) -> PeriodEstimate:
    """ESPRIT first; periodogram if ESPRIT is unusable; then the default."""
    config = config or FrequencyConfig()
    x = series.values if isinstance(series, MetricSeries) else np.asarray(series, dtype=float)
    n = x.shape[0]
    upper = n // 2
    max_order = min(config.max_order, n // 3)

    if max_order >= 2:
        try:
            freqs, _, conf = _esprit(x, max_order, config.energy_threshold)
        except (EspritError, np.linalg.LinAlgError):
            freqs = np.empty(0)
        if freqs.size:
            f, c = float(freqs[0]), float(conf[0])
            w = int(round(2 * np.pi / f))
            if c >= config.min_confidence and 2 <= w <= upper:
                return PeriodEstimate(w, PeriodMethod.ESPRIT, f, c)

    if n >= 8:
        est = periodogram_period(x, config.default_period)
        if est.method is PeriodMethod.PERIODOGRAM and est.confidence >= config.min_confidence:
            return est
    w = config.default_period
    return PeriodEstimate(w, PeriodMethod.DEFAULT, 2 * np.pi / w, 0.0)


class PeriodCache:
    """Per-series period store, persisted as a flat JSON object key -> int.

    Reads are lock-free dictionary lookups; writes take a lock and the file
    is rewritten via temp-file-and-rename.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._periods: dict[str, int] = {}
        if self.path is not None and self.path.exists():
            with open(self.path) as fh:
                raw = json.load(fh)
            self._periods = {str(k): int(v) for k, v in raw.items()}
        self.dirty = False

    def __contains__(self, key: str) -> bool:
        return key in self._periods

    def __len__(self) -> int:
        return len(self._periods)

    def get(self, key: str) -> int | None:
        return self._periods.get(key)

    def put(self, key: str, period: int) -> None:
        with self._lock:
            if self._periods.get(key) != int(period):
                self._periods[key] = int(period)
                self.dirty = True

    def get_or_estimate(self, series: MetricSeries, config: FrequencyConfig | None = None) -> int:
        cached = self.get(series.key)
        if cached is not None and 2 <= cached <= len(series) // 2:
            return cached
        if series.period_w is not None:
            w = series.period_w
        else:
            w = estimate_period(series, config).period_w
        self.put(series.key, w)
        return w

    def items(self):
        return dict(self._periods).items()

    def save(self) -> None:
        if self.path is None:
            return
        with self._lock:
            atomic_write_text(self.path, json.dumps(self._periods, indent=0, sort_keys=True) + "\n")
            self.dirty = False


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
