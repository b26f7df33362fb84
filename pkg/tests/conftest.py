import numpy as np
import pytest
from hypothesis import settings

from msmw import MultiWayPredictors, OutcomeVector, SourcePartition

settings.register_profile("msmw", deadline=None, max_examples=40)
settings.load_profile("msmw")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_data(rng, N=30, sizes=(3, 2), D=4, family="continuous", B=None, noise=1.0):
    part = SourcePartition(sizes)
    X = rng.standard_normal((N, part.total, D))
    if B is None:
        B = rng.standard_normal((part.total, D))
    score = np.einsum("npd,pd->n", X, B)
    if family == "binary":
        y = (score + rng.standard_normal(N) > 0).astype(float)
    else:
        y = score + noise * rng.standard_normal(N)
    return MultiWayPredictors(X, part), OutcomeVector(family, y), B


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, summary: str, details=()):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {summary}"
    ACCEPTANCE_LINES.append(line)
    for d in details:
        ACCEPTANCE_LINES.append(f"              {d}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
