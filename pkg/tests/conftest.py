import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kicksim import ActionLattice, KickedSystem, build_kick_kernel  # noqa: E402


@pytest.fixture(scope="session")
def lattice():
    return ActionLattice(-2048, 2048)


@pytest.fixture(scope="session")
def small_lattice():
    return ActionLattice(-256, 256)


@pytest.fixture(scope="session")
def kernel5():
    return build_kick_kernel(5.0)


@pytest.fixture(scope="session")
def rotor5():
    return KickedSystem(kick_strength=5.0, period=1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import CHARACTERIZATION, RESULTS
    except ImportError:
        return
    if not (RESULTS or CHARACTERIZATION):
        return
    terminalreporter.section("acceptance criteria")
    for name in RESULTS:
        ok, detail = RESULTS[name]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    for name, detail in CHARACTERIZATION.items():
        terminalreporter.write_line(f"[INFO] {name}: {detail}")
