"""Compare the numba and pure-numpy kernel backends.

Times every kernel, plus the full ``detect_last`` path, on a synthetic
corpus with both backends and prints one row per operation::

    python benchmarks/bench_kernels.py --n-series 200 --length 212

Numbers are per-series microseconds (best of ``--repeats`` passes, after a
warm-up pass that also triggers JIT compilation).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mmdalert import _kernels
from mmdalert.detect import DetectorConfig, detect_last
from mmdalert.decompose import get_decomposer
from mmdalert.synthetic import CorpusSpec, gen_corpus


def _best_us(fn, inputs, repeats: int) -> float:
    for x in inputs:
        fn(x)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for x in inputs:
            fn(x)
        best = min(best, time.perf_counter() - t0)
    return best / len(inputs) * 1e6


def kernel_cases(w: int):
    b, floor = 1.4826, -1.0
    return {
        "symmetric_ma": lambda k: (lambda x: k.symmetric_ma(x, w)),
        "seasonal_median": lambda k: (lambda x: k.seasonal_median(x, w)),
        "rolling_median_right": lambda k: (lambda x: k.rolling_median_right(x, w)),
        "median": lambda k: k.median,
        "mmd": lambda k: (lambda x: k.mmd(x, w)),
        "classical": lambda k: (lambda x: k.classical(x, w)),
        "probe_mmd": lambda k: (lambda x: k.probe_mmd(x, w, b, floor)),
        "probe_classical": lambda k: (lambda x: k.probe_classical(x, w, b, floor)),
    }


def run(n_series: int, length: int, w: int, repeats: int) -> list[tuple[str, float, float]]:
    corpus = gen_corpus(CorpusSpec(n_series=n_series, length=length, period=w, seed=0))
    inputs = [np.array(s.values) for s in corpus.series]
    backends = (_kernels.numba_impl, _kernels.numpy_impl)
    rows = []
    for name, make in kernel_cases(w).items():
        rows.append((name, *(_best_us(make(k), inputs, repeats) for k in backends)))

    cfg = DetectorConfig()
    saved = _kernels.active
    try:
        for dec_name in ("mmd", "classical"):
            dec = get_decomposer(dec_name)
            timings = []
            for k in backends:
                _kernels.active = k
                timings.append(_best_us(lambda s: detect_last(s, cfg, w, dec), corpus.series, repeats))
            rows.append((f"detect_last[{dec_name}]", *timings))
    finally:
        _kernels.active = saved
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n-series", type=int, default=164)
    ap.add_argument("--length", type=int, default=212)
    ap.add_argument("--period", type=int, default=7)
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args(argv)
    rows = run(args.n_series, args.length, args.period, args.repeats)
    print(f"{'operation':<26}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, nb, npy in rows:
        print(f"{name:<26}{nb:>12.2f}{npy:>12.2f}{npy / nb:>9.1f}x")


if __name__ == "__main__":
    main()
