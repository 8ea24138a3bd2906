import numpy as np
import pytest

from mmdalert.core import LabelRecord, MetricSeries, MMDError, series_key
from mmdalert.decompose import mmd_decompose
from mmdalert.detect import DetectorConfig, detect_last
from mmdalert.evaluation import (MetricsReport, agreement_ratio, aggregate_labels, bench_throughput, f_beta,
                                 grid_search, replay_alerting, scan_corpus, score_detector, verdict_at)
from mmdalert.retrieve import RetrievalConfig
from mmdalert.synthetic import Corpus, CorpusSpec, gen_corpus


def flags(*pairs, date="2018-03-01"):
    return [LabelRecord("m", date, who, flag) for who, flag in pairs]


class TestAgreement:
    def test_two_of_two(self):
        assert agreement_ratio(flags(("a", True), ("b", True)), 2) == 1.0

    def test_one_of_two_is_a_tie(self):
        assert agreement_ratio(flags(("a", True), ("b", False)), 2) == 0.5

    def test_two_of_three(self):
        assert agreement_ratio(flags(("a", True), ("b", True)), 3) == pytest.approx(0.667, abs=1e-3)

    def test_duplicate_flags_count_once(self):
        assert agreement_ratio(flags(("a", True), ("a", True)), 2) == 0.5

    @pytest.mark.parametrize("viewers", [0, -1])
    def test_no_viewers(self, viewers):
        with pytest.raises(ValueError):
            agreement_ratio([], viewers)

    def test_more_flags_than_viewers(self):
        with pytest.raises(ValueError):
            agreement_ratio(flags(("a", True), ("b", True)), 1)

    def test_aggregate_majority_and_ties(self):
        labels = [LabelRecord("m", None, who, False) for who in "abc"]
        labels += flags(("a", True), ("b", True), date="2018-03-01")
        labels += flags(("a", True), date="2018-03-02")
        agg = aggregate_labels(labels)[series_key("m", {})]
        assert agg["2018-03-01"].is_alert_majority
        assert agg["2018-03-01"].agreement_ratio == pytest.approx(2 / 3)
        assert not agg["2018-03-02"].is_alert_majority
        assert "2018-03-03" not in agg

    def test_aggregate_invariant(self):
        corpus = gen_corpus(CorpusSpec(n_series=20, label_noise=0.4, seed=3))
        for per_date in aggregate_labels(corpus.labels).values():
            for lab in per_date.values():
                assert 0.0 <= lab.agreement_ratio <= 1.0
                assert lab.is_alert_majority == (lab.agreement_ratio > 0.5)


class TestFBeta:
    def test_worked_example_high_recall(self):
        assert f_beta(0.3803, 0.7297, 2) == pytest.approx(0.616, abs=1e-3)

    def test_worked_example_low_precision(self):
        assert f_beta(0.2892, 0.6486, 2) == pytest.approx(0.519, abs=1e-3)

    def test_perfect(self):
        assert f_beta(1.0, 1.0, 2) == 1.0

    def test_both_zero(self):
        assert f_beta(0.0, 0.0, 2) == 0.0

    @pytest.mark.parametrize("p,r", [(0.2, 0.9), (0.5, 0.5), (0.7, 0.1), (1.0, 0.3)])
    def test_beta_one_is_harmonic_mean(self, p, r):
        assert f_beta(p, r, 1) == pytest.approx(2 * p * r / (p + r))

    def test_monotone(self):
        grid = np.linspace(0.0, 1.0, 21)
        for beta in (0.5, 1.0, 2.0):
            table = np.array([[f_beta(p, r, beta) for r in grid] for p in grid])
            assert np.all(np.diff(table, axis=0) >= -1e-15)
            assert np.all(np.diff(table, axis=1) >= -1e-15)

    def test_report_from_counts(self):
        rep = MetricsReport.from_counts(3, 1, 2, 10)
        assert (rep.precision, rep.recall) == (0.75, 0.6)
        assert rep.n == 16
        assert rep.to_dict()["f2"] == pytest.approx(f_beta(0.75, 0.6, 2))

    def test_report_without_positives(self):
        with pytest.raises(MMDError):
            MetricsReport.from_counts(0, 3, 0, 10)


def spike_corpus(n=60, spikes=(45, 52), eval_from=44):
    """One noisy seasonal series with huge spikes that three labelers flag."""
    r = np.random.default_rng(7)
    t = np.arange(n)
    x = 100 + 5 * np.sin(2 * np.pi * t / 7) + r.standard_normal(n)
    for s in spikes:
        x[s] += 80
    dates = np.datetime64("2018-01-01") + t
    s = MetricSeries("m", dates, x)
    labels = [LabelRecord("m", None, who, False) for who in "abc"]
    labels += [LabelRecord("m", str(dates[i]), who, True) for i in spikes for who in "abc"]
    corpus = Corpus((s,), tuple(labels), {s.key: np.isin(t, spikes).astype(np.int8)})
    return corpus.restrict(str(dates[eval_from]), str(dates[eval_from + 10])), {s.key: 7}


class TestScoreDetector:
    def test_perfect_detector(self):
        corpus, periods = spike_corpus()
        rep = score_detector(DetectorConfig(p_anom=0.01), corpus, periods=periods)
        assert (rep.precision, rep.recall, rep.f_beta) == (1.0, 1.0, 1.0)
        assert rep.n == 10

    def test_never_flags(self):
        corpus, periods = spike_corpus()
        rep = score_detector(DetectorConfig(p_anom=1e-12), corpus, periods=periods)
        assert rep.tp == rep.fp == 0
        assert rep.recall == 0.0 and rep.precision == 0.0

    def test_no_positive_labels(self):
        corpus, periods = spike_corpus()
        corpus = Corpus(corpus.series, tuple(r for r in corpus.labels if not r.is_alert), corpus.truth,
                        corpus.eval_start, corpus.eval_end)
        with pytest.raises(MMDError):
            score_detector(DetectorConfig(), corpus, periods=periods)

    def test_counts_cover_every_evaluated_point(self):
        corpus = gen_corpus(CorpusSpec(n_series=12, length=120, seed=1)).restrict("2018-03-01", None)
        rep = score_detector(DetectorConfig(), corpus, decomposer="classical")
        n_points = sum(1 for s in corpus.series for d in s.timestamps if corpus.in_range(d))
        assert rep.n == n_points  # no label noise, so no ties are dropped

    def test_ties_are_excluded(self):
        corpus, periods = spike_corpus()
        labels = [LabelRecord("m", None, who, False) for who in "ab"]
        labels += [LabelRecord("m", r.date, "a", True) for r in corpus.labels if r.is_alert]
        tied = Corpus(corpus.series, tuple(labels) + (LabelRecord("m", "2018-02-15", "b", True),),
                      corpus.truth, corpus.eval_start, corpus.eval_end)
        rep = score_detector(DetectorConfig(), tied, periods=periods)
        assert rep.n == 9  # the second spike, flagged by one of two viewers, is dropped

    def test_worker_count_does_not_matter(self):
        corpus = gen_corpus(CorpusSpec(n_series=6, length=100, seed=2)).restrict("2018-03-01", None)
        one = score_detector(DetectorConfig(), corpus)
        two = score_detector(DetectorConfig(), corpus, workers=2)
        assert one == two

    def test_scan_matches_detect_last(self):
        corpus = gen_corpus(CorpusSpec(n_series=3, length=80, seed=4)).restrict("2018-03-10", None)
        cfg = DetectorConfig()
        for sc in scan_corpus(corpus, "mmd", cfg, {s.key: 7 for s in corpus.series}):
            for t in (60, 70, 79):
                got = verdict_at(sc, t, cfg.k)
                want = detect_last(sc.series.truncate(t + 1), cfg, 7, mmd_decompose)
                assert got.is_anomaly == want.is_anomaly
                assert got.band_low == pytest.approx(want.band_low, abs=1e-9)
                assert got.exceed_streak == want.exceed_streak


@pytest.fixture(scope="module")
def tuned_split():
    corpus = gen_corpus(CorpusSpec(n_series=16, length=120, seed=5))
    return corpus.split("2018-03-15")


class TestGridSearch:
    def test_singleton_grid(self, tuned_split):
        train, test = tuned_split
        res = grid_search({"p_anom": [0.02], "persist_days": [2]}, train, test)
        assert res.best_params == {"p_anom": 0.02, "persist_days": 2}
        assert len(res.train_table) == 1

    def test_exhaustive_and_best_on_train(self, tuned_split):
        train, test = tuned_split
        grid = {"p_anom": [0.005, 0.01, 0.05], "persist_days": [1, 2]}
        res = grid_search(grid, train, test)
        assert len(res.train_table) == 6
        best = max(r.f_beta for _, r in res.train_table)
        assert res.train_report.f_beta == best

    def test_tie_break_prefers_small_values(self, tuned_split):
        train, test = tuned_split
        # k = 1e6 and 1e5: neither flags anything, so both tie at F2 = 0
        res = grid_search({"p_anom": [1e-10, 1e-12], "persist_days": [3, 2]}, train, test)
        assert {r.f_beta for _, r in res.train_table} == {0.0}
        assert res.best_params == {"p_anom": 1e-12, "persist_days": 2}

    def test_overlap_rejected(self, tuned_split):
        train, _ = tuned_split
        with pytest.raises(ValueError, match="overlap"):
            grid_search({"p_anom": [0.01]}, train, train)

    @pytest.mark.parametrize("grid", [{"p_anom": []}, {"persist_days": []}])
    def test_empty_grid(self, tuned_split, grid):
        with pytest.raises(ValueError, match="empty"):
            grid_search(grid, *tuned_split)

    def test_unknown_key(self, tuned_split):
        with pytest.raises(ValueError, match="unsupported"):
            grid_search({"alpha": [1]}, *tuned_split)

    def test_tuned_beats_fixed_default(self):
        train, test = gen_corpus(CorpusSpec(n_series=30, length=150, seed=8)).split("2018-04-01")
        grid = {"p_anom": [0.005, 0.01, 0.02, 0.05], "persist_days": [1, 2]}
        res = grid_search(grid, train, test)
        default = score_detector(DetectorConfig(), test)
        assert res.test_report.f_beta >= default.f_beta - 0.05


class TestBench:
    def test_empty(self):
        with pytest.raises(MMDError):
            bench_throughput("mmd", [])

    def test_report(self):
        series = gen_corpus(CorpusSpec(n_series=40, length=120, seed=0)).series
        rep = bench_throughput("mmd", series, repeats=5)
        assert rep.n_series == 40 and rep.repeats == 5
        assert rep.time_ms_per_100 > 0
        assert set(rep.to_dict()) == {"decomposer", "time_ms_per_100", "std_ms", "repeats", "n_series"}

    def test_repeated_runs_are_stable(self):
        series = gen_corpus(CorpusSpec(n_series=100, seed=0)).series
        rep = bench_throughput("classical", series, repeats=7)
        assert rep.std_ms < 0.2 * rep.time_ms_per_100


class TestReplay:
    def test_retrieval_thins_alerts(self):
        corpus = gen_corpus(CorpusSpec(n_series=30, length=120, anomaly_rate=0.03, shift_fraction=0.3,
                                       episode_fraction=0.3, seed=9)).restrict("2018-03-01", None)
        rep = replay_alerting(corpus, DetectorConfig(), RetrievalConfig(persist_days_k=3))
        assert 0 < rep.two_phase_alerts < rep.phase_one_alerts
        assert rep.two_phase_valid <= rep.two_phase_alerts
        assert 0.0 <= rep.phase_one_precision <= 1.0

    def test_persistence_one_keeps_daily_cap(self):
        corpus = gen_corpus(CorpusSpec(n_series=20, length=100, seed=2)).restrict("2018-03-01", None)
        rep = replay_alerting(corpus, DetectorConfig(), RetrievalConfig(persist_days_k=1))
        days = {str(d) for s in corpus.series for d in s.timestamps if corpus.in_range(d)}
        assert rep.two_phase_alerts <= RetrievalConfig().global_cap * len(days)
