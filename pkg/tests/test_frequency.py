import json
import threading

import numpy as np
import pytest

from mmdalert.core import MetricSeries, SeriesTooShortError
from mmdalert.frequency import (FrequencyConfig, PeriodCache, PeriodMethod, atomic_write_text, detrend,
                                esprit_frequencies, estimate_period, periodogram_period)


def sinusoid(q, n, amp=1.0, phase=0.3):
    return amp * np.sin(2 * np.pi * np.arange(n) / q + phase)


def fft_peak_freq(x):
    p = np.abs(np.fft.rfft(detrend(x))) ** 2
    p[0] = 0
    return 2 * np.pi * np.argmax(p) / len(x)


class TestEsprit:
    def test_pure_weekly_sinusoid(self):
        x = sinusoid(7, 140)
        freqs = esprit_frequencies(x)
        assert freqs[0][0] == pytest.approx(2 * np.pi / 7, abs=1e-6)
        # independent oracle: 140 is a multiple of 7, so the FFT bin is exact
        assert freqs[0][0] == pytest.approx(fft_peak_freq(x), abs=1e-6)
        # amplitudes are fitted to the detrended series, and detrending takes
        # away the small part of the sinusoid that projects onto a line
        assert freqs[0][1] == pytest.approx(1.0, abs=0.01)

    def test_constant_gives_nothing(self):
        assert esprit_frequencies(np.full(60, 3.0)) == []

    def test_pure_line_gives_nothing(self):
        assert esprit_frequencies(2.0 + 0.5 * np.arange(60)) == []

    def test_two_tones_strongest_first(self):
        rng = np.random.default_rng(0)
        x = sinusoid(7, 210, 3.0) + sinusoid(30, 210, 1.0, 1.1) + 0.1 * rng.standard_normal(210)
        freqs = esprit_frequencies(x)
        assert abs(round(2 * np.pi / freqs[0][0]) - 7) <= 1
        assert len(freqs) <= 5
        amps = [a for _, a in freqs]
        assert amps == sorted(amps, reverse=True)
        assert all(0 < f <= np.pi for f, _ in freqs)

    def test_too_short(self):
        with pytest.raises(SeriesTooShortError):
            esprit_frequencies(np.arange(20.0), max_order=10)

    @pytest.mark.parametrize("q", [3, 4, 5, 11, 19, 30])
    def test_agrees_with_periodogram_within_one_bin(self, q):
        rng = np.random.default_rng(q)
        n = 10 * q
        x = sinusoid(q, n, np.sqrt(2)) + rng.standard_normal(n) / np.sqrt(10)  # SNR 10
        f = esprit_frequencies(x)[0][0]
        assert abs(f - fft_peak_freq(x)) <= 2 * np.pi / n + 1e-12


class TestPeriodogram:
    def test_exact_bin(self):
        est = periodogram_period(sinusoid(7, 140))
        assert est.period_w == 7 and est.method is PeriodMethod.PERIODOGRAM
        assert round(2 * np.pi / est.dominant_freq) == est.period_w

    def test_constant_is_default(self):
        est = periodogram_period(np.full(30, 1.0), default_period=9)
        assert est.method is PeriodMethod.DEFAULT and est.period_w == 9

    def test_white_noise_has_low_confidence(self):
        x = np.random.default_rng(2).standard_normal(365)
        assert periodogram_period(x).confidence < FrequencyConfig().min_confidence

    def test_clamped_period_keeps_invariant(self):
        # a single slow cycle lands in bin 1 whose period n exceeds n/2
        x = np.r_[np.zeros(10), np.ones(10), np.zeros(10)]
        est = periodogram_period(x)
        assert est.period_w <= 15
        assert round(2 * np.pi / est.dominant_freq) == est.period_w


class TestEstimatePeriod:
    def test_weekly_series(self):
        rng = np.random.default_rng(4)
        t = np.arange(180)
        x = 100 + 0.2 * t + 6 * np.sin(2 * np.pi * t / 7) + rng.standard_normal(180)
        est = estimate_period(x)
        assert (est.period_w, est.method) == (7, PeriodMethod.ESPRIT)
        assert 0.2 <= est.confidence <= 1.0

    def test_white_noise_defaults(self):
        x = np.random.default_rng(5).standard_normal(365)
        est = estimate_period(x)
        assert (est.period_w, est.method) == (7, PeriodMethod.DEFAULT)

    def test_monthly_style_period_twelve(self):
        rng = np.random.default_rng(6)
        x = 5 * sinusoid(12, 96) + 0.3 * rng.standard_normal(96)
        assert estimate_period(x).period_w == 12

    @pytest.mark.parametrize("q", range(3, 31))
    def test_noiseless_integer_periods(self, q):
        assert estimate_period(sinusoid(q, 10 * q)).period_w == q

    def test_deterministic_and_accepts_series(self):
        x = sinusoid(9, 90) + 0.1 * np.random.default_rng(0).standard_normal(90)
        s = MetricSeries("m", np.arange(90) + np.datetime64("2024-01-01"), x)
        assert estimate_period(s) == estimate_period(x)

    def test_custom_default(self):
        cfg = FrequencyConfig(default_period=5)
        assert estimate_period(np.full(40, 2.0), cfg).period_w == 5


class TestPeriodCache:
    def _series(self, key_suffix="a"):
        return MetricSeries(f"m{key_suffix}", np.arange(70) + np.datetime64("2024-01-01"), sinusoid(7, 70))

    def test_estimates_once_and_persists(self, tmp_path):
        path = tmp_path / "periods.json"
        cache = PeriodCache(path)
        s = self._series()
        assert cache.get_or_estimate(s) == 7
        assert cache.dirty
        cache.save()
        assert json.loads(path.read_text()) == {s.key: 7}
        reloaded = PeriodCache(path)
        reloaded.put(s.key, 5)  # a cached value wins over re-estimation
        assert reloaded.get_or_estimate(s) == 5

    def test_stale_entry_reestimated(self):
        cache = PeriodCache()
        s = self._series()
        cache.put(s.key, 60)  # larger than len/2
        assert cache.get_or_estimate(s) == 7

    def test_concurrent_puts(self, tmp_path):
        cache = PeriodCache(tmp_path / "p.json")

        def work(i):
            for j in range(200):
                cache.put(f"k{i}-{j}", 2 + j % 5)

        threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        cache.save()
        assert len(PeriodCache(tmp_path / "p.json")) == 800

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        target = tmp_path / "sub" / "f.txt"
        atomic_write_text(target, "one")
        atomic_write_text(target, "two")
        assert target.read_text() == "two"
        assert [p.name for p in target.parent.iterdir()] == ["f.txt"]
