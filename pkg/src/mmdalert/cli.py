"""Command-line batch pipeline.

Subcommands::

    mmdalert gen          write a synthetic corpus (observations, labels, truth)
    mmdalert detect       phase one: one verdict per series
    mmdalert alert        phase two: ranked, deduplicated alert list
    mmdalert eval         precision / recall / F2 against crowd labels
    mmdalert tune         grid search on a date split
    mmdalert bench        single-threaded detection throughput per decomposer
    mmdalert fit-weights  learn ranking weights from feedback

Exit codes: 0 success, 1 some records failed, 2 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import AnomalyVerdict, MetricSeries, MMDError, fill_missing, validate_series
from .decompose import DECOMPOSERS, get_decomposer, min_length
from .detect import DetectorConfig, detect_last
from .evaluation import bench_throughput, grid_search, score_detector
from .formats import (format_dimensions, labels_csv, observations_csv, read_feedback,
                      read_jsonl, read_labels, read_observations)
from .frequency import FrequencyConfig, PeriodCache, atomic_write_text, estimate_period
from .rank import RankWeights, fit_weights
from .retrieve import AlertHistory, RetrievalConfig, run_retrieval
from .synthetic import Corpus, CorpusSpec, gen_corpus

logger = logging.getLogger("mmdalert")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    """Bad configuration or unreadable/unwritable files (exit code 2)."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _section(cls, raw, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigError(f"config section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from None


@dataclass(frozen=True)
class PipelineConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    weights: RankWeights = field(default_factory=RankWeights)
    frequency: FrequencyConfig = field(default_factory=FrequencyConfig)
    decomposer: str = "mmd"
    period_cache_path: Path | None = None
    history_path: Path | None = None
    weights_path: Path | None = None

    _KEYS = ("detector", "retrieval", "weights", "weights_path", "frequency", "default_period",
             "decomposer", "period_cache_path", "history_path")

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: Path = Path(".")) -> "PipelineConfig":
        unknown = set(raw) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def path(key):
            value = raw.get(key)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        freq_raw = dict(raw.get("frequency") or {})
        if "default_period" in raw:
            freq_raw.setdefault("default_period", raw["default_period"])
        weights_path = path("weights_path")
        if weights_path is not None and "weights" in raw:
            raise ConfigError("give either 'weights' or 'weights_path', not both")
        if weights_path is not None:
            try:
                weights = RankWeights.from_dict(json.loads(weights_path.read_text()))
            except OSError as exc:
                raise ConfigError(f"cannot read weights file: {exc}") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad weights file {weights_path}: {exc}") from None
        else:
            weights = _section(RankWeights, raw.get("weights"), "weights")
        decomposer = raw.get("decomposer", "mmd")
        if decomposer not in DECOMPOSERS:
            raise ConfigError(f"unknown decomposer {decomposer!r}")
        cfg = cls(
            detector=_section(DetectorConfig, raw.get("detector"), "detector"),
            retrieval=_section(RetrievalConfig, raw.get("retrieval"), "retrieval"),
            weights=weights,
            frequency=_section(FrequencyConfig, freq_raw, "frequency"),
            decomposer=decomposer,
            period_cache_path=path("period_cache_path"),
            history_path=path("history_path"),
            weights_path=weights_path,
        )
        for p in (cfg.period_cache_path, cfg.history_path):
            if p is not None and not p.parent.is_dir():
                raise ConfigError(f"directory for {p} does not exist")
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, Mapping):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw, path.parent)

    def to_dict(self) -> dict:
        def opt(p):
            return None if p is None else str(p)
        return {
            "detector": asdict(self.detector),
            "retrieval": asdict(self.retrieval),
            "weights": self.weights.to_dict(),
            "frequency": asdict(self.frequency),
            "decomposer": self.decomposer,
            "period_cache_path": opt(self.period_cache_path),
            "history_path": opt(self.history_path),
        }


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------

def _default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _emit(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        try:
            atomic_write_text(output, text)
        except OSError as exc:
            raise ConfigError(f"cannot write {output}: {exc}") from None


def _emit_json(obj, output: str | None) -> None:
    _emit(json.dumps(obj, indent=2, sort_keys=True) + "\n", output)


def _require(path: str | None, flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: no such file {p}")
    return p


def load_series(path: str | Path) -> tuple[dict[str, MetricSeries], list[str]]:
    """Read, validate and gap-fill every series; returns (series by key, problems)."""
    groups, diagnostics = read_observations(path)
    problems = [str(d) for d in diagnostics]
    out: dict[str, MetricSeries] = {}
    for key in sorted(groups):
        try:
            out[key] = fill_missing(validate_series(groups[key]))
        except MMDError as exc:
            problems.append(f"series ({key}): {exc}")
    return out, problems


def _report_problems(problems: Sequence[str]) -> None:
    for p in problems:
        logger.error(p)


def _detect_job(job):
    series, w, freq_cfg, det_cfg, decomposer = job
    note = None
    try:
        if w is None:
            w = estimate_period(series, freq_cfg).period_w
            if len(series) < min_length(w) + 1:
                # two cycles fill the whole series: too long to test the last
                # point, and too few cycles to be a trustworthy seasonality
                note = (f"series ({series.key}): estimated period {w} is too long for "
                        f"{len(series)} points; using default period {freq_cfg.default_period}")
                w = freq_cfg.default_period
        verdict = detect_last(series, det_cfg, w, get_decomposer(decomposer))
        return series.key, w, verdict, None, note
    except MMDError as exc:
        return series.key, w, None, str(exc), note


def run_detection(series: Mapping[str, MetricSeries], cfg: PipelineConfig, workers: int,
                  cache: PeriodCache) -> tuple[list[AnomalyVerdict], list[str]]:
    """Phase one over all series, fanned out across ``workers`` processes."""
    jobs = []
    for key, s in sorted(series.items()):
        w = cache.get(key)
        if w is not None and not (w >= 2 and len(s) >= min_length(w) + 1):
            w = None  # stale entry for a series that has since shrunk
        jobs.append((s, w, cfg.frequency, cfg.detector, cfg.decomposer))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_detect_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        results = [_detect_job(j) for j in jobs]
    verdicts, problems = [], []
    for key, w, verdict, err, note in results:
        if note is not None:
            logger.warning("%s", note)
        if w is not None:
            cache.put(key, w)
        if err is not None:
            problems.append(f"series ({key}): {err}")
        else:
            verdicts.append(verdict)
    return verdicts, problems


def _load_history(path: Path | None) -> AlertHistory:
    if path is None:
        logger.warning("no history_path configured; dedupe only sees this run")
        return AlertHistory()
    if not path.exists():
        logger.warning("history file %s not found; starting with empty history", path)
        return AlertHistory()
    try:
        return AlertHistory.from_jsonl(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read history: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"corrupt history file {path}: {exc}") from None


def _corpus_from_files(input_path: Path, labels_path: Path) -> tuple[Corpus, list[str]]:
    series, problems = load_series(input_path)
    try:
        labels = read_labels(labels_path)
    except MMDError as exc:
        raise ConfigError(str(exc)) from None
    return Corpus(tuple(series[k] for k in sorted(series)), tuple(labels)), problems


def _periods(corpus: Corpus, cfg: PipelineConfig) -> dict[str, int]:
    cache = PeriodCache(cfg.period_cache_path)
    periods = {s.key: cache.get_or_estimate(s, cfg.frequency) for s in corpus.series}
    if cache.dirty:
        cache.save()
    return periods


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen(args, cfg: PipelineConfig) -> int:
    spec = CorpusSpec(n_series=args.n_series, length=args.length, start=args.start,
                      noise=args.noise, anomaly_rate=args.anomaly_rate,
                      shift_fraction=args.shift_fraction, episode_fraction=args.episode_fraction,
                      label_noise=args.label_noise, seed=args.seed)
    corpus = gen_corpus(spec)
    out = Path(args.output or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "observations.csv", observations_csv(corpus.series))
        atomic_write_text(out / "labels.csv", labels_csv(corpus.labels))
        truth_rows = ["metric_id,dimensions,date,kind\n"]
        for s in corpus.series:
            for t in np.flatnonzero(corpus.truth[s.key]):
                truth_rows.append(f"{s.metric_id},{format_dimensions(s.dimensions)},"
                                  f"{s.timestamps[t]},{int(corpus.truth[s.key][t])}\n")
        atomic_write_text(out / "truth.csv", "".join(truth_rows))
    except OSError as exc:
        raise ConfigError(f"cannot write corpus: {exc}") from None
    logger.info("wrote %d series, %d label records to %s", len(corpus.series), len(corpus.labels), out)
    return EXIT_OK


def cmd_detect(args, cfg: PipelineConfig) -> int:
    series, problems = load_series(_require(args.input, "--input"))
    cache = PeriodCache(cfg.period_cache_path)
    t0 = time.perf_counter()
    verdicts, failed = run_detection(series, cfg, args.workers, cache)
    elapsed = time.perf_counter() - t0
    problems += failed
    logger.info("detected %d series in %.2fs (%.0f series/s)", len(series), elapsed,
                len(series) / elapsed if elapsed > 0 else float("inf"))
    _emit("".join(json.dumps(v.to_dict(), sort_keys=True) + "\n" for v in verdicts), args.output)
    if cache.dirty:
        cache.save()
    _report_problems(problems)
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_alert(args, cfg: PipelineConfig) -> int:
    series, problems = load_series(_require(args.input, "--input"))
    if args.verdicts:
        try:
            verdicts = [AnomalyVerdict.from_dict(r) for r in read_jsonl(_require(args.verdicts, "--verdicts"))]
        except (MMDError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad verdicts file: {exc}") from None
        usable = []
        for v in verdicts:
            if v.key in series:
                usable.append(v)
            elif v.is_anomaly:
                problems.append(f"verdict ({v.key}): series not found in --input")
        verdicts = usable
    else:
        cache = PeriodCache(cfg.period_cache_path)
        verdicts, failed = run_detection(series, cfg, args.workers, cache)
        problems += failed
        if cache.dirty:
            cache.save()

    history = _load_history(cfg.history_path)
    result = run_retrieval(verdicts, cfg.weights, history, cfg.retrieval, series)
    _emit("".join(json.dumps(a.to_dict(), sort_keys=True) + "\n" for a in result.alerts), args.output)
    for key, rule in result.suppressed:
        logger.info("suppressed %s by %s", key, rule)
    if cfg.history_path is not None and result.history is not history:
        try:
            atomic_write_text(cfg.history_path, result.history.to_jsonl())
        except OSError as exc:
            raise ConfigError(f"cannot write history: {exc}") from None
    _report_problems(problems)
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    corpus, problems = _corpus_from_files(_require(args.input, "--input"), _require(args.labels, "--labels"))
    corpus = corpus.restrict(args.start, args.end)
    report = score_detector(cfg.detector, corpus, args.decomposer or cfg.decomposer, args.persist_days,
                            _periods(corpus, cfg), workers=args.workers)
    out = {"decomposer": args.decomposer or cfg.decomposer, "p_anom": cfg.detector.p_anom,
           "persist_days": args.persist_days, **report.to_dict()}
    _emit_json(out, args.output)
    _report_problems(problems)
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_tune(args, cfg: PipelineConfig) -> int:
    corpus, problems = _corpus_from_files(_require(args.input, "--input"), _require(args.labels, "--labels"))
    train, test = corpus.split(args.split)
    grid = {"p_anom": _float_list(args.p_grid), "persist_days": _int_list(args.persist_grid)}
    decomposer = args.decomposer or cfg.decomposer
    result = grid_search(grid, train, test, decomposer, cfg.detector, _periods(corpus, cfg),
                         workers=args.workers)
    out = {
        "decomposer": decomposer,
        "split": args.split,
        "best_params": result.best_params,
        "train": result.train_report.to_dict(),
        "test": result.test_report.to_dict(),
    }
    _emit_json(out, args.output)
    _report_problems(problems)
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_bench(args, cfg: PipelineConfig) -> int:
    if args.workers != 1:
        logger.warning("bench always runs single-threaded; ignoring --workers %d", args.workers)
    series, problems = load_series(_require(args.input, "--input"))
    corpus = Corpus(tuple(series[k] for k in sorted(series)), ())
    periods = _periods(corpus, cfg)
    rows = []
    for name in args.decomposers.split(","):
        name = name.strip()
        if name not in DECOMPOSERS:
            raise ConfigError(f"unknown decomposer {name!r}")
        rows.append(bench_throughput(name, corpus.series, args.batch, args.repeats,
                                     cfg.detector, periods).to_dict())
    _emit("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), args.output)
    _report_problems(problems)
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_fit_weights(args, cfg: PipelineConfig) -> int:
    try:
        feedback = read_feedback(_require(args.input, "--input"))
    except MMDError as exc:
        raise ConfigError(str(exc)) from None
    weights = fit_weights(feedback, args.reg)
    _emit_json(weights.to_dict(), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--input", help="input file")
    common.add_argument("--output", help="output file (default: stdout)")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: available CPUs)")
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mmdalert", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic corpus to --output DIR")
    g.add_argument("--n-series", type=int, default=164)
    g.add_argument("--length", type=int, default=212)
    g.add_argument("--start", default="2018-01-01")
    g.add_argument("--noise", choices=("gaussian", "student_t", "exponential"), default="gaussian")
    g.add_argument("--anomaly-rate", type=float, default=0.02)
    g.add_argument("--shift-fraction", type=float, default=0.2)
    g.add_argument("--episode-fraction", type=float, default=0.0)
    g.add_argument("--label-noise", type=float, default=0.0)
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("detect", parents=[common], help="one verdict per series")
    d.set_defaults(func=cmd_detect)

    a = sub.add_parser("alert", parents=[common], help="ranked alert list for the day")
    a.add_argument("--verdicts", help="verdicts from 'detect' (default: run detection)")
    a.set_defaults(func=cmd_alert)

    for name, func, helptext in (("eval", cmd_eval, "score against labels"),
                                 ("tune", cmd_tune, "grid search on a date split")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("--labels", help="label CSV")
        e.add_argument("--decomposer", choices=sorted(DECOMPOSERS))
        e.set_defaults(func=func)
        if name == "eval":
            e.add_argument("--start", help="first evaluated date (inclusive)")
            e.add_argument("--end", help="last evaluated date (exclusive)")
            e.add_argument("--persist-days", type=int, default=1)
        else:
            e.add_argument("--split", required=True, help="train is before, test from this date")
            e.add_argument("--p-grid", default="0.002,0.005,0.01,0.02,0.05,0.1,0.2")
            e.add_argument("--persist-grid", default="1,2,3")

    b = sub.add_parser("bench", parents=[common], help="detection throughput per decomposer")
    b.add_argument("--decomposers", default="mmd,classical")
    b.add_argument("--batch", type=int, default=100)
    b.add_argument("--repeats", type=int, default=5)
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("fit-weights", parents=[common], help="fit ranking weights from feedback CSV")
    f.add_argument("--reg", type=float, default=0.1)
    f.set_defaults(func=cmd_fit_weights)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.workers is None:
        args.workers = _default_workers()
    if args.workers < 1:
        logger.error("--workers must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = PipelineConfig.load(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except MMDError as exc:
        logger.error("%s", exc)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
