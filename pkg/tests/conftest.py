import numpy as np
import pytest

from hydrohom.fields import dirac_preset
from hydrohom.forms import FormContext
from hydrohom.grid import Grid

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    def record(key, passed, detail=""):
        ACCEPTANCE[key] = (bool(passed), detail)
        print(f"criterion {key:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return record


@pytest.fixture(scope="session")
def dirac16():
    return dirac_preset(Grid((16, 16)))


@pytest.fixture(scope="session")
def ctx16(dirac16):
    return FormContext(dirac16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
