import contextlib
import time

import numpy as np
import pytest

from hrtr.synthgen import SynthSpec, generate

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line per criterion."""

    @contextlib.contextmanager
    def _run(name):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            _ACCEPTANCE.append((name, False, f"{type(exc).__name__}: {exc}"[:200], time.perf_counter() - t0))
            raise
        _ACCEPTANCE.append((name, True, "", time.perf_counter() - t0))

    return _run


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail, secs in _ACCEPTANCE:
        line = f"{'PASS' if ok else 'FAIL'}  {name}  ({secs:.1f}s)"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    return generate(SynthSpec(num_trials=6, num_classes=4, feature_dim=5, duration_range=(10, 40),
                              segments_range=(3, 6), val_trials=1, test_trials=1, seed=3))
