import warnings
from datetime import date

import numpy as np
import pytest

from ecplf.forecasting import LoadHistory
from ecplf.synthetic import synthetic_load


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_history():
    """Forty synthetic days starting Monday 2018-01-01."""
    power, temperature = synthetic_load(40, seed=11)
    return LoadHistory(power, temperature)


@pytest.fixture(scope="session")
def first_day():
    return date(2018, 1, 1)


@pytest.fixture(autouse=True)
def _quiet_underflow():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="conditioning weights underflow")
        yield


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion.

    Use as ``with criterion(3, "detail") as c: ...``; an exception inside the
    block marks the criterion failed and propagates.
    """
    from contextlib import contextmanager

    @contextmanager
    def record(number, title):
        notes = []
        try:
            yield notes
        except pytest.skip.Exception:
            _ACCEPTANCE.append((number, "SKIP", title, notes))
            raise
        except BaseException:
            _ACCEPTANCE.append((number, "FAIL", title, notes))
            raise
        _ACCEPTANCE.append((number, "PASS", title, notes))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, notes in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        extra = f" ({'; '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}{extra}")
