import pytest

from chclearn import frontend, model, smt
from helpers import ACCEPTANCE, H0_TEXT


@pytest.fixture
def backend():
    return smt.Backend(seed=0)


@pytest.fixture
def h0_raw():
    return frontend.parse(H0_TEXT)


@pytest.fixture
def h0(backend):
    return model.normalize_system(frontend.parse(H0_TEXT), backend)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
