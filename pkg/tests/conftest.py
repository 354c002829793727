import numpy as np
import pytest

from rcl.data import ObservationSet, TreatmentSpace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_set(y, d, z=None, labels=None):
    y = np.asarray(y, dtype=float)
    if z is None:
        z = np.zeros((len(y), 1))
    space = TreatmentSpace(tuple(labels) if labels else tuple(sorted(set(map(str, d)))))
    return ObservationSet(y, np.asarray(d), z, space)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance(capsys):
    def record(number: int, passed: bool, detail: str):
        line = f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
