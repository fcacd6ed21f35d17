import numpy as np
import pytest

from twophase.population import Population, Region


def make_population(cpi, metrics=None, names=None):
    cpi = list(cpi)
    if metrics is None:
        metrics = [() for _ in cpi]
        names = ()
    regions = [Region(f"r{i:04d}", 1_000_000, float(c), tuple(map(float, m))) for i, (c, m) in enumerate(zip(cpi, metrics))]
    return Population(regions, tuple(names or (f"m{j}" for j in range(len(metrics[0])))))


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lognormal_pop():
    rng = np.random.default_rng(2024)
    cpi = 1.2 * np.exp(0.5 * rng.standard_normal(400))
    metrics = np.column_stack([cpi * rng.uniform(0.8, 1.2, 400), rng.uniform(0, 1, 400)])
    return make_population(cpi, metrics, ("l2_miss", "branch_miss"))


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
