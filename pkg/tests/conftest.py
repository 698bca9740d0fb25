import numpy as np
import pytest

from fracunstable.grid import Params, build_halfball_grid
from fracunstable.solver import minimize

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


_CACHE = {}


def cached_minimizer(a, resolution, data="x1+0.2", radius=1.0, dim=2):
    """Minimizers shared across test modules (they are immutable)."""
    key = (a, resolution, data, radius, dim)
    if key not in _CACHE:
        fns = {"x1+0.2": lambda x: x[:, 0] + 0.2, "x1": lambda x: x[:, 0]}
        p = Params.symmetric(a)
        g = build_halfball_grid(p, radius, resolution, dim=dim)
        _CACHE[key] = minimize(g, p, fns[data])
    return _CACHE[key]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
