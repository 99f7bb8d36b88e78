import numpy as np
import pytest

from cuspsource.scenario import BaselineProfile, Detector, PlanarPoint, Rectangle, Scenario, canonical_scenario


@pytest.fixture
def canonical():
    return canonical_scenario(n=1000.0)


def make_scenario(positions, source=(0.0, 0.0), domain=(-1.0, 1.0, -1.0, 1.0), profile=None, **kw):
    profile = profile or BaselineProfile("constant", 2.0, 0.0)
    params = dict(kappa=0.25, delta=1.0, lambda0=1.0, nu=1.0, horizon=20.0, n=1000.0)
    params.update(kw)
    return Scenario(
        detectors=tuple(Detector(PlanarPoint(*p), profile) for p in positions),
        source=PlanarPoint(*source),
        domain=Rectangle(*domain),
        **params,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion lines from test_acceptance.py, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
