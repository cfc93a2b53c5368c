import numpy as np
import pytest

from pefl.ckks.params import preset
from pefl.ckks.scheme import CkksContext

from acceptance_log import RESULTS


@pytest.fixture(scope="session")
def desk():
    return preset("desk")


@pytest.fixture(scope="session")
def ctx(desk):
    return CkksContext(desk)


@pytest.fixture(scope="session")
def keypair(ctx):
    rng = np.random.default_rng(2024)
    return ctx.keygen(rng, rotations=[1, 2, 3, 5, -1, 7])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, title, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
