"""Shared long runs, computed once per session."""
import math

import pytest

from diffcp.classical import InitialTail
from diffcp.halfline import GridConfig, evolve_halfline
from diffcp.wholeline import InitQuadrature, evolve_wholeline

EPS = 0.1


@pytest.fixture(scope="session")
def wholeline_run():
    return evolve_wholeline(InitQuadrature.uniform(0.0, 1.0), EPS, math.inf, stop_ratio=120.0,
                            dt_factor=0.01)


@pytest.fixture(scope="session")
def halfline_grid():
    return GridConfig(h0=None, alpha=0.004, dt_factor=0.005)


@pytest.fixture(scope="session")
def halfline_run(halfline_grid):
    return evolve_halfline(InitialTail.uniform(0.2, 1.2), EPS, math.inf, halfline_grid,
                           stop_ratio=60.0)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Registry ``{criterion: [(part, passed, detail)]}`` printed after the run."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        parts = results[n]
        bad = [f"{p} ({d})" for p, ok, d in parts if not ok]
        if bad:
            terminalreporter.write_line(f"criterion {n}: FAIL  " + "; ".join(bad))
            continue
        shown = [f"{p} ({d})" for p, _, d in parts if p == "runtime" or len(parts) <= 3]
        terminalreporter.write_line(f"criterion {n}: PASS  {len(parts)} checks"
                                    + ("; " + "; ".join(shown) if shown else ""))
