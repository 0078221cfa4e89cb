import numpy as np
import pytest

from dbo_lab.datagen import SynthSpec, generate_synthetic
from dbo_lab.oracles import LogisticHyperOpt, random_quadratic


@pytest.fixture(scope="session")
def quad():
    return random_quadratic(n=4, p=3, q=5, seed=0)


@pytest.fixture(scope="session")
def logistic_small():
    # 8 agents, p=10, 50 samples per split
    data = generate_synthetic(SynthSpec(n_agents=8, dim=10, samples_per_agent=50, seed=0))
    return LogisticHyperOpt(data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; lines are echoed in the session summary."""

    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
