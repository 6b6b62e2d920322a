import numpy as np
import pytest

from otocquench.pipeline import QuenchSystem


@pytest.fixture(scope="session")
def pair_g5():
    """N=2, g=5 final system at the production cutoff."""
    return QuenchSystem(2, 5.0, 30)


@pytest.fixture(scope="session")
def pair_g5_small():
    return QuenchSystem(2, 5.0, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one pass/fail line per acceptance criterion."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
