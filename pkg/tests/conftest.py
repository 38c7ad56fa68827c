import numpy as np
import pytest

from hetcd.raster import TrainingSet


def random_set(rng, m, p, q, scale=1.0):
    """Training set with smooth targets so every back-end has signal to fit."""
    x = rng.uniform(-1.0, 1.0, size=(m, p)) * scale
    w = rng.normal(size=(p, q))
    y = np.sin(x @ w) + 0.05 * rng.normal(size=(m, q))
    return TrainingSet(x, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        status, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status} {detail}")
