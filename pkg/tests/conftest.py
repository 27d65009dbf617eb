import numpy as np
import pytest

from demandbandit.bidlog import BidLog, LogGenParams, generate_log


def make_log(ctr, cvr, price, cost):
    return BidLog(np.asarray(ctr, float), np.asarray(cvr, float),
                  np.asarray(price, float), np.asarray(cost, float))


@pytest.fixture(scope="session")
def default_log():
    return generate_log(LogGenParams(), seed=0)


@pytest.fixture(scope="session")
def small_log():
    return generate_log(LogGenParams(n_impressions=500), seed=3)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
