import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("nholo", max_examples=25, deadline=None)
settings.load_profile("nholo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion_line():
    """Record the one-line verdict of an acceptance criterion (printed inline and in the summary)."""

    def record(k: int, ok: bool, detail: str):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
