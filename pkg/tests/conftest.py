import contextlib

import numpy as np
import pytest

from piqbench.schema import default_schema

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    @contextlib.contextmanager
    def run(number, title):
        try:
            yield
        except BaseException as exc:
            line = f"FAIL [{number:>2}] {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            print(line)
            lines.append(line)
            raise
        line = f"PASS [{number:>2}] {title}"
        print(line)
        lines.append(line)

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s[6:8])):
            terminalreporter.write_line(line)
