import pytest

from nls_modecheck.ground_state import ground_state_pack

# criterion number -> (status, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def gs1():
    return ground_state_pack(1, h=0.01, r_max=20.0)


@pytest.fixture(scope="session")
def gs3():
    return ground_state_pack(3, h=0.02, r_max=20.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {detail}")
