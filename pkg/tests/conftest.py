import sys

import numpy as np
import pytest

from pv_ident.harness import run_scenario_modes, run_scenario_stc
from pv_ident.model import get_mode
from pv_ident.simulator import SimConfig, simulate

LAM = 6e5
STEP = 1e-8


@pytest.fixture(scope="session")
def stc():
    return get_mode("STC")


@pytest.fixture(scope="session")
def stc_trajectory(stc):
    """2 ms of the STC plant under the default ripple, from steady state."""
    return simulate(SimConfig(step=STEP, duration=2e-3), stc)


@pytest.fixture(scope="session")
def stc_run():
    return run_scenario_stc()


@pytest.fixture(scope="session")
def modes_run():
    return run_scenario_modes()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in mod.NAMES:
        terminalreporter.write_line(mod.format_line(n))
