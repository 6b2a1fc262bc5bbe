import numpy as np
import pytest

from filterformer.gaussian import Gaussian
from filterformer.paths import SampledPath, uniform_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, d, low=0.05, high=2.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(low, high, d)) @ Q.T


def random_gaussian(rng, d, low=0.05, high=2.0):
    return Gaussian(rng.normal(size=d), random_spd(rng, d, low, high))


def random_walk_path(rng, steps=64, dim=1, T=1.0, scale=1.0):
    grid = uniform_grid(T, steps)
    incr = rng.standard_normal((steps, dim)) * np.sqrt(T / steps) * scale
    values = np.vstack([np.zeros((1, dim)), np.cumsum(incr, axis=0)])
    return SampledPath(grid, values)


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records one acceptance line for the terminal summary."""
    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
