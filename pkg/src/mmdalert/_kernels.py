"""Hot numeric loops behind the decomposers.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same contract. The active set is chosen once at import:
numba unless ``MMDALERT_DISABLE_NUMBA`` is set to a truthy value or numba
cannot be imported. Both sets stay importable (``numba_impl`` /
``numpy_impl``) so tests and benchmarks can compare them directly.

All kernels take contiguous float64 arrays and return new arrays.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_TRUTHY = {"1", "true", "yes", "on"}


def _ma_weights(w: int) -> np.ndarray:
    # even w: 2xw-MA, w+1 taps with half-weight endpoints
    if w % 2:
        return np.ones(w)
    k = np.ones(w + 1)
    k[0] = k[-1] = 0.5
    return k


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def _np_symmetric_ma(x, w):
    k = _ma_weights(w)
    num = np.convolve(x, k, mode="same")
    den = np.convolve(np.ones_like(x), k, mode="same")
    return num / den


def _np_seasonal_median(x, w):
    n = x.shape[0]
    cycles = -(-n // w)
    padded = np.full(cycles * w, np.nan)
    padded[:n] = x
    phase = np.nanmedian(padded.reshape(cycles, w), axis=0)
    return np.tile(phase, cycles)[:n]


def _np_phase_mean(x, w, lo, hi):
    n = x.shape[0]
    sums = np.zeros(w)
    counts = np.zeros(w)
    idx = np.arange(lo, hi)
    np.add.at(sums, idx % w, x[lo:hi])
    np.add.at(counts, idx % w, 1.0)
    phase = sums / counts
    return np.tile(phase, -(-n // w))[:n]


def _np_rolling_median_right(x, w):
    n = x.shape[0]
    out = np.empty(n)
    head = min(w, n)
    for t in range(head):
        out[t] = np.median(x[: t + 1])
    if n > w:
        out[w:] = np.median(sliding_window_view(x, w + 1), axis=1)
    return out


def _np_median(x):
    return float(np.median(x))


def _np_mmd(x, w):
    rough = _np_symmetric_ma(x, w)
    seasonal = _np_seasonal_median(x - rough, w)
    s_prime = x - seasonal
    trend_f = _np_rolling_median_right(s_prime, w)
    trend = trend_f + np.median(s_prime - trend_f)
    return trend, seasonal, x - trend - seasonal


def _np_classical(x, w):
    n = x.shape[0]
    trend = _np_symmetric_ma(x, w)
    half = w // 2
    seasonal = _np_phase_mean(x - trend, w, half, n - half)
    seasonal = seasonal - seasonal[:w].mean()
    return trend, seasonal, x - trend - seasonal


def _np_robust_stats(r, b, floor):
    mu = np.median(r)
    return float(mu), max(b * float(np.median(np.abs(r - mu))), floor)


def _np_floor(x, floor):
    if floor >= 0.0:
        return floor
    return 1e-9 * max(1.0, abs(float(np.median(x))))


def _np_probe(decompose):
    def probe(x, w, b, floor):
        trend, seasonal, resid = decompose(x, w)
        mu, sigma = _np_robust_stats(resid[:-1], b, _np_floor(x, floor))
        return float(trend[-1] + seasonal[-1]), float(resid[-1]), mu, sigma
    return probe


numpy_impl = SimpleNamespace(
    name="numpy",
    symmetric_ma=_np_symmetric_ma,
    seasonal_median=_np_seasonal_median,
    phase_mean=_np_phase_mean,
    rolling_median_right=_np_rolling_median_right,
    median=_np_median,
    mmd=_np_mmd,
    classical=_np_classical,
    robust_stats=_np_robust_stats,
    probe_mmd=_np_probe(_np_mmd),
    probe_classical=_np_probe(_np_classical),
)


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def _select(a, k):
        # Hoare quickselect, in place: a[k] ends at its sorted position with
        # a[:k] <= a[k] <= a[k+1:]
        lo = 0
        hi = a.shape[0] - 1
        while hi > lo:
            pivot = a[(lo + hi) // 2]
            i = lo
            j = hi
            while i <= j:
                while a[i] < pivot:
                    i += 1
                while a[j] > pivot:
                    j -= 1
                if i <= j:
                    a[i], a[j] = a[j], a[i]
                    i += 1
                    j -= 1
            if k <= j:
                hi = j
            elif k >= i:
                lo = i
            else:
                return a[k]
        return a[k]

    @njit(cache=True)
    def median_inplace(a):
        n = a.shape[0]
        h = n // 2
        upper = _select(a, h)
        if n % 2:
            return upper
        lower = a[0]
        for i in range(1, h):
            if a[i] > lower:
                lower = a[i]
        return 0.5 * (lower + upper)

    @njit(cache=True)
    def median(x):
        return median_inplace(x.copy())

    @njit(cache=True)
    def symmetric_ma(x, w):
        n = x.shape[0]
        half = w // 2
        even = w % 2 == 0
        out = np.empty(n)
        for t in range(n):
            num = 0.0
            den = 0.0
            lo = max(0, t - half)
            hi = min(n - 1, t + half)
            for i in range(lo, hi + 1):
                wt = 1.0
                if even and (i == t - half or i == t + half):
                    wt = 0.5
                num += wt * x[i]
                den += wt
            out[t] = num / den
        return out

    @njit(cache=True)
    def _seasonal_median_into(x, w, out, scratch):
        n = x.shape[0]
        for ph in range(min(w, n)):
            m = 0
            for t in range(ph, n, w):
                scratch[m] = x[t]
                m += 1
            med = median_inplace(scratch[:m])
            for t in range(ph, n, w):
                out[t] = med

    @njit(cache=True)
    def seasonal_median(x, w):
        out = np.empty(x.shape[0])
        _seasonal_median_into(x, w, out, np.empty(x.shape[0] // w + 1))
        return out

    @njit(cache=True)
    def phase_mean(x, w, lo, hi):
        n = x.shape[0]
        sums = np.zeros(w)
        counts = np.zeros(w)
        for t in range(lo, hi):
            sums[t % w] += x[t]
            counts[t % w] += 1.0
        out = np.empty(n)
        for t in range(n):
            out[t] = sums[t % w] / counts[t % w]
        return out

    @njit(cache=True)
    def _rolling_median_into(x, w, out, buf):
        # sorted buffer of the current window; once full, the evicted value's
        # slot takes the new value, which is then bubbled into place
        n = x.shape[0]
        m = 0
        for t in range(n):
            v = x[t]
            if t > w:
                old = x[t - w - 1]
                i = 0
                while buf[i] != old:
                    i += 1
                while i + 1 < m and buf[i + 1] < v:
                    buf[i] = buf[i + 1]
                    i += 1
                while i > 0 and buf[i - 1] > v:
                    buf[i] = buf[i - 1]
                    i -= 1
                buf[i] = v
            else:
                i = m
                while i > 0 and buf[i - 1] > v:
                    buf[i] = buf[i - 1]
                    i -= 1
                buf[i] = v
                m += 1
            h = m // 2
            if m % 2:
                out[t] = buf[h]
            else:
                out[t] = 0.5 * (buf[h - 1] + buf[h])

    @njit(cache=True)
    def rolling_median_right(x, w):
        out = np.empty(x.shape[0])
        _rolling_median_into(x, w, out, np.empty(w + 1))
        return out

    @njit(cache=True)
    def mmd(x, w):
        n = x.shape[0]
        work = symmetric_ma(x, w)
        for t in range(n):
            work[t] = x[t] - work[t]  # detrended by the rough trend
        seasonal = np.empty(n)
        _seasonal_median_into(work, w, seasonal, np.empty(n // w + 1))
        for t in range(n):
            work[t] = x[t] - seasonal[t]  # deseasonalized
        trend = np.empty(n)
        _rolling_median_into(work, w, trend, np.empty(w + 1))
        for t in range(n):
            work[t] -= trend[t]
        bias = median_inplace(work)
        resid = np.empty(n)
        for t in range(n):
            trend[t] += bias
            resid[t] = x[t] - trend[t] - seasonal[t]
        return trend, seasonal, resid

    @njit(cache=True)
    def classical(x, w):
        n = x.shape[0]
        trend = symmetric_ma(x, w)
        half = w // 2
        seasonal = phase_mean(x - trend, w, half, n - half)
        seasonal = seasonal - seasonal[:w].mean()
        return trend, seasonal, x - trend - seasonal

    @njit(cache=True)
    def robust_stats(r, b, floor):
        mu = median(r)
        mad = median(np.abs(r - mu))
        return mu, max(b * mad, floor)

    @njit(cache=True)
    def _floor(x, b_mad, floor):
        # floor < 0 requests the default 1e-9 * max(1, |median(x)|); the
        # median is only computed when it could bind
        if floor >= 0.0:
            return floor
        bound = 1.0
        for v in x:
            if abs(v) > bound:
                bound = abs(v)
        if b_mad >= 1e-9 * bound:
            return 1e-9 * bound  # any value <= b_mad gives the same max
        return 1e-9 * max(1.0, abs(median(x)))

    @njit(cache=True)
    def _mad_tail(r, mu, b):
        m = r.shape[0] - 1
        a = np.empty(m)
        for t in range(m):
            a[t] = abs(r[t] - mu)
        return b * median_inplace(a)

    @njit(cache=True)
    def _median_without(a, h, removed):
        # ``a`` was quickselected at h = n // 2; return the median of the
        # multiset with one copy of ``removed`` taken out
        n = a.shape[0]
        o_h = a[h]
        o_lo = -np.inf
        for i in range(h):
            if a[i] > o_lo:
                o_lo = a[i]
        o_hi = np.inf
        for i in range(h + 1, n):
            if a[i] < o_hi:
                o_hi = a[i]
        # new order statistics at h-1 and h after the removal
        if removed < o_h:
            new_lo, new_h = o_h, o_hi
        elif removed == o_h:
            new_lo, new_h = o_lo, o_hi
        else:
            new_lo, new_h = o_lo, o_h
        if n % 2:
            return 0.5 * (new_lo + new_h)  # n-1 even: stats h-1 and h
        return new_lo  # n-1 odd: stat h-1

    @njit(cache=True)
    def probe_mmd(x, w, b, floor):
        n = x.shape[0]
        work = symmetric_ma(x, w)
        for t in range(n):
            work[t] = x[t] - work[t]
        seasonal = np.empty(n)
        _seasonal_median_into(work, w, seasonal, np.empty(n // w + 1))
        for t in range(n):
            work[t] = x[t] - seasonal[t]
        trend = np.empty(n)
        _rolling_median_into(work, w, trend, np.empty(w + 1))
        for t in range(n):
            work[t] -= trend[t]
        d_last = work[n - 1]
        h = n // 2
        upper = _select(work, h)
        if n % 2:
            bias = upper
        else:
            lower = work[0]
            for i in range(1, h):
                if work[i] > lower:
                    lower = work[i]
            bias = 0.5 * (lower + upper)
        # residual median without the last point, from the same selection
        mu = _median_without(work, h, d_last) - bias
        resid = np.empty(n)
        for t in range(n):
            resid[t] = x[t] - (trend[t] + bias) - seasonal[t]
        b_mad = _mad_tail(resid, mu, b)
        sigma = max(b_mad, _floor(x, b_mad, floor))
        pred = trend[n - 1] + bias + seasonal[n - 1]
        return pred, resid[n - 1], mu, sigma

    @njit(cache=True)
    def probe_classical(x, w, b, floor):
        trend, seasonal, resid = classical(x, w)
        n = x.shape[0]
        mu = median(resid[: n - 1])
        b_mad = _mad_tail(resid, mu, b)
        sigma = max(b_mad, _floor(x, b_mad, floor))
        return trend[n - 1] + seasonal[n - 1], resid[n - 1], mu, sigma

    return SimpleNamespace(
        name="numba",
        symmetric_ma=symmetric_ma,
        seasonal_median=seasonal_median,
        phase_mean=phase_mean,
        rolling_median_right=rolling_median_right,
        median=median,
        mmd=mmd,
        classical=classical,
        robust_stats=robust_stats,
        probe_mmd=probe_mmd,
        probe_classical=probe_classical,
    )


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

if os.environ.get("MMDALERT_DISABLE_NUMBA", "").strip().lower() in _TRUTHY or numba_impl is None:
    active = numpy_impl
else:
    active = numba_impl

BACKEND = active.name
