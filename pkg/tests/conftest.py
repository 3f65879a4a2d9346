import numpy as np
import pytest
from threadpoolctl import threadpool_limits


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session", autouse=True)
def single_thread():
    # bitwise reproducibility checks assume one BLAS thread
    with threadpool_limits(limits=1):
        yield


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records, prints and asserts one acceptance line."""
    def check(n: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[n] = (bool(ok), line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n][1])
