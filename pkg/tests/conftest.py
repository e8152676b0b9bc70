from __future__ import annotations

import numpy as np
import pytest

from vbflex.config import (
    DEFAULT_EXO,
    DEFAULT_TARIFF,
    default_building,
    heterogeneous_building,
    synth_exo,
    tou_tariff,
)


@pytest.fixture(scope="session")
def office():
    return default_building()


@pytest.fixture(scope="session")
def hetero():
    return heterogeneous_building()


@pytest.fixture(scope="session")
def summer_day(office):
    return synth_exo(DEFAULT_EXO, 48, office.dt, office.n_zones)


@pytest.fixture(scope="session")
def summer_week(office):
    return synth_exo({**DEFAULT_EXO, "seed": 7}, 240, office.dt, office.n_zones)


@pytest.fixture(scope="session")
def tou_week(office):
    return tou_tariff(DEFAULT_TARIFF, 240, office.dt)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed again at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
