import numpy as np
import pytest
from hypothesis import settings

from mmdalert import _kernels

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

BACKENDS = {"numba": _kernels.numba_impl, "numpy": _kernels.numpy_impl}


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per kernel backend."""
    impl = BACKENDS[request.param]
    monkeypatch.setattr(_kernels, "active", impl)
    return impl


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def seasonal_series(n=140, w=7, slope=0.05, amp=5.0, noise=0.5, seed=0):
    r = np.random.default_rng(seed)
    t = np.arange(n)
    return 50 + slope * t + amp * np.sin(2 * np.pi * t / w) + noise * r.standard_normal(n)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Call the returned function once per criterion; it records the outcome,
    prints the line live and fails the test when ``ok`` is false.
    """
    results = request.config.stash.setdefault(ACCEPTANCE, {})
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def check(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
        results[number] = line
        if capman is None:
            print(line, flush=True)
        else:
            with capman.global_and_fixture_disabled():
                print(f"\n{line}", flush=True)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
