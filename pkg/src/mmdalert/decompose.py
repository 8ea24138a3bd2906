"""Trend/seasonal/residual decomposers.

``mmd_decompose`` is the robust median decomposer; ``classical_decompose``
is the moving-average baseline it is compared against.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import _kernels
from .core import Decomposition, MetricSeries, SeriesTooShortError

Decomposer = Callable[[object, int], Decomposition]


def _as_array(x) -> np.ndarray:
    if isinstance(x, MetricSeries):
        x = x.values
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("expected a 1-d series")
    if np.isnan(a).any():
        raise ValueError("series contains missing values; run fill_missing first")
    return a


def _check_w(w: int) -> int:
    w = int(w)
    if w < 2:
        raise ValueError(f"period w must be >= 2, got {w}")
    return w


def symmetric_ma(x, w: int) -> np.ndarray:
    """Centered moving average of window ``w``.

    Even ``w`` uses the 2xw form (w+1 taps, half-weight endpoints). Windows
    are truncated at the edges and renormalized over the available taps, so
    the output has no missing entries.
    """
    w = _check_w(w)
    x = _as_array(x)
    taps = w if w % 2 else w + 1
    if x.shape[0] < taps:
        raise SeriesTooShortError(f"need at least {taps} points for w={w}, got {x.shape[0]}")
    return _kernels.active.symmetric_ma(x, w)


def seasonal_median(l_prime, w: int) -> np.ndarray:
    """Per-phase median over every observation sharing ``t mod w``."""
    w = _check_w(w)
    x = _as_array(l_prime)
    if x.shape[0] < 2 * w:
        raise SeriesTooShortError(f"need at least {2 * w} points for w={w}, got {x.shape[0]}")
    return _kernels.active.seasonal_median(x, w)


def rolling_median_right(s_prime, w: int) -> np.ndarray:
    """Right-aligned rolling median over indices ``t-w .. t`` (w+1 points).

    The first ``w`` outputs use the truncated window ``0 .. t``.
    """
    w = _check_w(w)
    x = _as_array(s_prime)
    if x.shape[0] < w + 1:
        raise SeriesTooShortError(f"need at least {w + 1} points for w={w}, got {x.shape[0]}")
    return _kernels.active.rolling_median_right(x, w)


def min_length(w: int) -> int:
    return max(2 * w, w + 1)


def mmd_decompose(series, w: int) -> Decomposition:
    x = _as_array(series)
    w = _check_w(w)
    if x.shape[0] < min_length(w):
        raise SeriesTooShortError(f"need at least {min_length(w)} points for w={w}, got {x.shape[0]}")
    # rough trend L -> seasonal S from X - L -> right-aligned median trend on
    # X - S, shifted by the median lag bias; the kernel fuses the steps
    return Decomposition(*_kernels.active.mmd(x, w))


def classical_decompose(series, w: int) -> Decomposition:
    """Additive moving-average decomposition.

    Phase means are taken only over positions whose moving-average window is
    complete, then re-centered to sum to zero over one period.
    """
    x = _as_array(series)
    w = _check_w(w)
    n = x.shape[0]
    if n < min_length(w):
        raise SeriesTooShortError(f"need at least {min_length(w)} points for w={w}, got {n}")
    return Decomposition(*_kernels.active.classical(x, w))


DECOMPOSERS: dict[str, Decomposer] = {
    "mmd": mmd_decompose,
    "classical": classical_decompose,
}


def get_decomposer(name: str) -> Decomposer:
    try:
        return DECOMPOSERS[name]
    except KeyError:
        raise ValueError(f"unknown decomposer {name!r}; choose from {sorted(DECOMPOSERS)}") from None
